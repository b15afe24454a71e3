use clap::{Parser, Subcommand};
use fcbf_cli::commands::{
    cmd_compare, cmd_run, cmd_sweep, cmd_verify, parse_values, CliError, CompareArgs, RunArgs, SweepArgs, VerifyArgs,
    VERIFY_SAMPLES,
};
use fcbf_core::constraints::ControllerKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fcbf", version, about = "Filtered control barrier function simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one controller and write its trajectory CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// fcbf, hocbf or sp-hocbf; defaults to the config's `controller`.
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[arg(long)]
        out: PathBuf,
        /// Trajectory plot; input plots go next to it.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Record QP solve times (makes the CSV non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Repeat a run over values of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        controller: Option<ControllerKind>,
        /// k3, alpha, tau or theta0
        #[arg(long)]
        param: String,
        /// Comma-separated list.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Tabulate and plot two or more trajectory CSVs.
    Compare {
        csvs: Vec<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run derivative checks and initial-condition checks for a config.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full report as TOML.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = VERIFY_SAMPLES)]
        samples: usize,
    },
}

fn dispatch(cmd: Command) -> Result<i32, CliError> {
    let mut out = std::io::stdout().lock();
    match cmd {
        Command::Run {
            config,
            controller,
            out: csv,
            svg,
            seed,
            timing,
        } => {
            let args = RunArgs {
                config,
                controller,
                out: csv,
                svg,
                seed,
                timing,
            };
            cmd_run(&args, &mut out).map(|_| 0)
        }
        Command::Sweep {
            config,
            controller,
            param,
            values,
            out_dir,
            jobs,
        } => {
            let args = SweepArgs {
                config,
                controller,
                param,
                values: parse_values(&values)?,
                out_dir,
                jobs,
            };
            cmd_sweep(&args, &mut out).map(|r| r.exit_code())
        }
        Command::Compare { csvs, svg } => cmd_compare(&CompareArgs { csvs, svg }, &mut out).map(|_| 0),
        Command::Verify {
            config,
            seed,
            report,
            samples,
        } => cmd_verify(
            &VerifyArgs {
                config,
                seed,
                report,
                samples,
            },
            &mut out,
        )
        .map(|_| 0),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FCBF_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

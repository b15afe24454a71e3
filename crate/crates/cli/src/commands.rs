//! The four subcommands. Each returns the process exit code through
//! [`CliError::exit_code`] and writes its human-readable output to `out`.

use crate::config::{LoadError, LoadedConfig, SWEEP_PARAMS};
use crate::csv_log::{self, CsvError, CsvRow};
use crate::manifest::RunManifest;
use crate::svg::{Circle, Plot, Series};
use fcbf_core::constraints::{goal_heading, ControllerKind, SetCheck};
use fcbf_core::sim::{run, RecordStatus, RunOutcome, ScenarioConfig, TrajectoryLog};
use fcbf_core::verify::{
    compare_controllers, lipschitz_estimate, ComparisonTable, run_deriv_suite, CheckContext, DerivCheckReport, SmoothnessReport,
};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Samples per derivative check in `verify`.
pub const VERIFY_SAMPLES: usize = 500;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] LoadError),
    #[error("{0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

fn runtime(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| runtime(&format!("cannot create {}", dir.display()), e))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    create_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| runtime(&format!("cannot write {}", path.display()), e))
}

/// `dir/stem<suffix>.<ext>` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

pub fn summary_line(label: &str, log: &TrajectoryLog) -> String {
    let s = log.summary();
    let at = match &log.outcome {
        RunOutcome::Completed => String::new(),
        RunOutcome::Stopped { t, .. } => format!(" at t={t}"),
        RunOutcome::Failed { t, reason } => format!(" at t={t} ({reason})"),
    };
    format!(
        "{label}: status={}{at} steps={} min_b={:.6e} goal_distance={:.4} (r_d={}) max_rate=[{:.6e}, {:.6e}]",
        log.outcome.label(),
        s.steps_completed,
        s.min_b,
        s.goal_distance,
        log.config.unicycle.goal_tol,
        s.max_rate[0],
        s.max_rate[1],
    )
}

fn scenario_circles(c: &ScenarioConfig) -> Vec<Circle> {
    vec![
        Circle {
            label: "obstacle".into(),
            cx: c.unicycle.obstacle_x,
            cy: c.unicycle.obstacle_y,
            r: c.unicycle.obstacle_r,
            fill: "#999999",
        },
        Circle {
            label: "goal".into(),
            cx: c.unicycle.goal_x,
            cy: c.unicycle.goal_y,
            r: c.unicycle.goal_tol,
            fill: "#2ca02c",
        },
    ]
}

/// Trajectory overlay plus one time plot per input channel.
pub fn overlay_plots(title: &str, runs: &[(String, Vec<CsvRow>)], scenario: &ScenarioConfig) -> [Plot; 3] {
    let traj = Plot {
        title: format!("{title}: trajectories"),
        x_label: "x (m)".into(),
        y_label: "y (m)".into(),
        series: runs
            .iter()
            .map(|(label, rows)| Series {
                label: label.clone(),
                points: rows.iter().map(|r| (r.x, r.y)).collect(),
            })
            .collect(),
        circles: scenario_circles(scenario),
        equal_aspect: true,
    };
    let channel = |ch: usize, unit: &str| Plot {
        title: format!("{title}: u{}", ch + 1),
        x_label: "t (s)".into(),
        y_label: format!("u{} ({unit})", ch + 1),
        series: runs
            .iter()
            .map(|(label, rows)| Series {
                label: label.clone(),
                points: rows
                    .iter()
                    .filter_map(|r| if ch == 0 { r.u1 } else { r.u2 }.map(|u| (r.t, u)))
                    .collect(),
            })
            .collect(),
        circles: Vec::new(),
        equal_aspect: false,
    };
    [traj, channel(0, "m/s^2"), channel(1, "N")]
}

fn write_plots(path: &Path, plots: &[Plot; 3]) -> Result<Vec<PathBuf>, CliError> {
    let paths = [path.to_path_buf(), sibling(path, "_u1"), sibling(path, "_u2")];
    for (p, plot) in paths.iter().zip(plots) {
        write_file(p, plot.render().as_bytes())?;
    }
    Ok(paths.to_vec())
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub controller: Option<ControllerKind>,
    pub out: PathBuf,
    pub svg: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Also record QP solve times; the CSV is then no longer reproducible.
    pub timing: bool,
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<TrajectoryLog, CliError> {
    let loaded = LoadedConfig::load(&args.config)?;
    let scenario = loaded.scenario(args.controller)?;
    let seed = args.seed.unwrap_or(loaded.file.seed);
    let mut manifest = RunManifest::new(&args.config, &loaded.hash, scenario.controller.as_str(), seed);

    let log = run(&scenario).map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = csv_log::rows_from_log(&log, args.timing);
    write_file(&args.out, &csv_log::to_bytes(&rows))?;
    manifest.outputs.push(args.out.display().to_string());
    if let Some(svg) = &args.svg {
        let plots = overlay_plots(scenario.controller.as_str(), &[(scenario.controller.to_string(), rows)], &scenario);
        for p in write_plots(svg, &plots)? {
            manifest.outputs.push(p.display().to_string());
        }
    }
    manifest.status = log.outcome.label().to_string();
    manifest
        .write(&RunManifest::path_for(&args.out))
        .map_err(|e| runtime("cannot write manifest", e))?;

    let _ = writeln!(out, "{}", summary_line(scenario.controller.as_str(), &log));
    if let RunOutcome::Failed { t, reason } = &log.outcome {
        return Err(CliError::Runtime(format!("run failed at t = {t}: {reason}")));
    }
    Ok(log)
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub config: PathBuf,
    pub controller: Option<ControllerKind>,
    pub param: String,
    pub values: Vec<f64>,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

pub fn parse_values(list: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| CliError::Usage(format!("bad sweep value `{s}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone)]
pub struct SweepItem {
    pub value: f64,
    pub csv: PathBuf,
    pub result: Result<(TrajectoryLog, SmoothnessReport), String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub items: Vec<SweepItem>,
    pub summary_csv: PathBuf,
    pub plots: Vec<PathBuf>,
}

impl SweepResult {
    pub fn exit_code(&self) -> i32 {
        self.items.iter().map(|i| i.exit_code).max().unwrap_or(0)
    }
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<SweepResult, CliError> {
    if !SWEEP_PARAMS.contains(&args.param.as_str()) {
        return Err(CliError::Usage(format!(
            "cannot sweep `{}` (expected one of {})",
            args.param,
            SWEEP_PARAMS.join(", ")
        )));
    }
    if args.values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let loaded = LoadedConfig::load(&args.config)?;
    let base = loaded.scenario(args.controller)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| runtime("cannot create output directory", e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| runtime("cannot start worker pool", e))?;
    let items: Vec<SweepItem> = pool.install(|| {
        args.values
            .par_iter()
            .enumerate()
            .map(|(i, &value)| sweep_item(&loaded, args, i, value))
            .collect()
    });

    let mut summary = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let header = [
        "param", "value", "controller", "status", "steps", "min_b", "goal_distance", "max_rate_u1", "max_rate_u2",
        "total_variation_u1", "total_variation_u2", "rate_bound_ok", "csv",
    ];
    summary.write_record(header).map_err(|e| runtime("summary", e))?;
    let mut runs = Vec::new();
    for item in &items {
        let value = csv_log::num(item.value);
        let label = format!("{}={}", args.param, item.value);
        match &item.result {
            Ok((log, smooth)) => {
                let s = log.summary();
                let _ = writeln!(out, "{}", summary_line(&label, log));
                let _ = writeln!(
                    out,
                    "  smoothness: max_rate=[{:.6e}, {:.6e}] total_variation=[{:.6e}, {:.6e}] bound_ok={}",
                    smooth.max_rate[0],
                    smooth.max_rate[1],
                    smooth.total_variation[0],
                    smooth.total_variation[1],
                    smooth.within_bound().map(|b| b.to_string()).unwrap_or_else(|| "n/a".into())
                );
                summary
                    .write_record([
                        args.param.clone(),
                        value,
                        log.controller().to_string(),
                        log.outcome.label().to_string(),
                        s.steps_completed.to_string(),
                        csv_log::num(s.min_b),
                        csv_log::num(s.goal_distance),
                        csv_log::num(smooth.max_rate[0]),
                        csv_log::num(smooth.max_rate[1]),
                        csv_log::num(smooth.total_variation[0]),
                        csv_log::num(smooth.total_variation[1]),
                        smooth.within_bound().map(|b| b.to_string()).unwrap_or_default(),
                        item.csv.display().to_string(),
                    ])
                    .map_err(|e| runtime("summary", e))?;
                runs.push((label, csv_log::rows_from_log(log, false)));
            }
            Err(e) => {
                let _ = writeln!(out, "{label}: error: {e}");
                let mut row = vec![args.param.clone(), value, base.controller.to_string(), "Error".into()];
                row.extend(std::iter::repeat_n(String::new(), header.len() - 5));
                row.push(item.csv.display().to_string());
                summary.write_record(row).map_err(|e| runtime("summary", e))?;
            }
        }
    }

    let ok: Vec<(f64, f64)> = items
        .iter()
        .filter_map(|i| i.result.as_ref().ok().map(|(l, _)| (i.value, l.summary().min_b)))
        .collect();
    if ok.len() > 1 {
        let mut sorted = ok.clone();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
        let order: Vec<String> = sorted.iter().map(|(v, b)| format!("{}={v} ({b:.4e})", args.param)).collect();
        let _ = writeln!(out, "min_b ordering (closest first): {}", order.join(" < "));
    }

    let summary_csv = args.out_dir.join("sweep_summary.csv");
    write_file(&summary_csv, &summary.into_inner().map_err(|e| runtime("summary", e))?)?;
    let plots = overlay_plots(&format!("{} sweep", args.param), &runs, &base);
    let plots = write_plots(&args.out_dir.join("sweep_trajectories.svg"), &plots)?;
    Ok(SweepResult {
        items,
        summary_csv,
        plots,
    })
}

fn sweep_item(loaded: &LoadedConfig, args: &SweepArgs, index: usize, value: f64) -> SweepItem {
    let csv = args.out_dir.join(format!("{}_{index:02}.csv", args.param));
    let fail = |msg: String, code| SweepItem {
        value,
        csv: csv.clone(),
        result: Err(msg),
        exit_code: code,
    };
    let mut file = loaded.file.clone();
    if let Err(e) = file.set_param(&args.param, value) {
        return fail(e, 1);
    }
    let scenario = file.scenario(args.controller);
    if let Err(e) = scenario.validate() {
        return fail(e.to_string(), 1);
    }
    let log = match run(&scenario) {
        Ok(l) => l,
        Err(e) => return fail(e.to_string(), 1),
    };
    let mut manifest = RunManifest::new(&loaded.path, &loaded.hash, scenario.controller.as_str(), file.seed);
    manifest.overrides.push(format!("{} = {}", args.param, value));
    manifest.status = log.outcome.label().to_string();
    manifest.outputs.push(csv.display().to_string());
    let bytes = csv_log::to_bytes(&csv_log::rows_from_log(&log, false));
    if let Err(e) = write_file(&csv, &bytes) {
        return fail(e.to_string(), 2);
    }
    if let Err(e) = manifest.write(&RunManifest::path_for(&csv)) {
        return fail(e.to_string(), 2);
    }
    let code = if matches!(log.outcome, RunOutcome::Failed { .. }) { 2 } else { 0 };
    let smooth = lipschitz_estimate(&log);
    SweepItem {
        value,
        csv,
        result: Ok((log, smooth)),
        exit_code: code,
    }
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub csvs: Vec<PathBuf>,
    pub svg: Option<PathBuf>,
}

/// A CSV turned back into a log, with the scenario taken from its manifest
/// when one is present.
pub fn load_run(path: &Path) -> Result<(Vec<CsvRow>, TrajectoryLog), CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    let rows = csv_log::read_rows(file).map_err(|e: CsvError| CliError::Usage(format!("{}: {e}", path.display())))?;
    let records = csv_log::records_from_rows(&rows).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;

    let manifest = RunManifest::read(&RunManifest::path_for(path)).ok();
    let controller = manifest
        .as_ref()
        .and_then(|m| m.controller.parse::<ControllerKind>().ok())
        .unwrap_or_else(|| {
            if rows.iter().any(|r| r.uf1.is_some()) {
                ControllerKind::Fcbf
            } else {
                ControllerKind::Hocbf
            }
        });
    let scenario = manifest
        .as_ref()
        .and_then(|m| LoadedConfig::load(Path::new(&m.config_path)).ok())
        .and_then(|c| c.scenario(Some(controller)).ok())
        .unwrap_or_else(|| {
            log::warn!("{}: no usable manifest, assuming the reference scenario", path.display());
            ScenarioConfig::paper(controller)
        });
    let outcome = match records.last().map(|r| r.status) {
        Some(RecordStatus::Terminal) => RunOutcome::Completed,
        Some(RecordStatus::Qp(status)) => RunOutcome::Stopped {
            t: records.last().map(|r| r.t).unwrap_or(0.0),
            status,
        },
        None => RunOutcome::Failed {
            t: 0.0,
            reason: "empty log".into(),
        },
    };
    Ok((rows, TrajectoryLog::from_records(scenario, records, outcome)))
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<ComparisonTable, CliError> {
    if args.csvs.len() < 2 {
        return Err(CliError::Usage("compare needs at least two CSV files".into()));
    }
    let mut logs = BTreeMap::new();
    let mut runs = Vec::new();
    let mut scenario = None;
    for path in &args.csvs {
        let (rows, log) = load_run(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut label = stem.clone();
        let mut n = 2;
        while logs.contains_key(&label) {
            label = format!("{stem}#{n}");
            n += 1;
        }
        scenario.get_or_insert_with(|| log.config.clone());
        logs.insert(label.clone(), log);
        runs.push((label, rows));
    }
    let table = compare_controllers(&logs);
    let _ = write!(out, "{}", table.render());
    if let (Some(svg), Some(scenario)) = (&args.svg, &scenario) {
        write_plots(svg, &overlay_plots("comparison", &runs, scenario))?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub pass: bool,
    pub goal_heading: String,
    pub startup: Vec<SetCheck>,
    pub derivative_checks: Vec<DerivCheckReport>,
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub report: Option<PathBuf>,
    pub samples: usize,
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<VerifyReport, CliError> {
    let loaded = LoadedConfig::load(&args.config)?;
    let scenario = loaded.scenario(None)?;
    let seed = args.seed.unwrap_or(loaded.file.seed);
    let startup = scenario.startup_report();
    let heading = goal_heading(&scenario.initial_state, &scenario.unicycle);
    let ctx = CheckContext {
        params: scenario.unicycle,
        filter: scenario.filter,
        gains: scenario.gains,
    };
    let checks = run_deriv_suite(&ctx, args.samples, seed);
    let pass = startup.all_pass() && heading.is_ok() && checks.iter().all(|c| c.pass);
    let report = VerifyReport {
        config: args.config.display().to_string(),
        config_hash: loaded.hash.clone(),
        seed,
        pass,
        goal_heading: match &heading {
            Ok(_) => "ok".into(),
            Err(e) => format!("GoalSingularity: {e}"),
        },
        startup: startup.checks.clone(),
        derivative_checks: checks,
    };

    for c in &report.startup {
        let _ = writeln!(out, "startup {:<10} {:>14.6e} {}", c.name, c.value, if c.pass { "PASS" } else { "FAIL" });
    }
    let _ = writeln!(out, "goal heading at x(0): {}", report.goal_heading);
    for c in &report.derivative_checks {
        let _ = writeln!(
            out,
            "deriv {:<14} samples={} seed={} max_err={:.3e} threshold={:.0e} {}",
            c.operation,
            c.samples,
            c.seed,
            c.max_rel_error,
            c.threshold,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = &args.report {
        let text = toml::to_string(&report).map_err(|e| runtime("cannot serialize report", e))?;
        write_file(path, text.as_bytes())?;
    }
    if !pass {
        let mut why = Vec::new();
        if let Err(e) = &heading {
            why.push(format!("GoalSingularity ({e})"));
        }
        why.extend(startup.failures().map(|c| format!("initial condition outside {}", c.name)));
        why.extend(report.derivative_checks.iter().filter(|c| !c.pass).map(|c| format!("{} derivative", c.operation)));
        let _ = writeln!(out, "FAIL: {}", why.join("; "));
        return Err(CliError::Verification(why.join("; ")));
    }
    let _ = writeln!(out, "all checks passed");
    Ok(report)
}

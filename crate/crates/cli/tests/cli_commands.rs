use fcbf_cli::config::git_blob_hash;
use fcbf_cli::csv_log::{self, num, HEADER};
use fcbf_cli::manifest::RunManifest;
use fcbf_cli::svg::polyline_points;
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fcbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcbf"))
        .args(args)
        .env("FCBF_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn write_cfg(dir: &Path, name: &str, extra: &str) -> String {
    let base = std::fs::read_to_string(configs().join("fcbf.toml")).unwrap();
    let mut lines: Vec<String> = base.lines().map(str::to_string).collect();
    for e in extra.lines() {
        let key = e.split('=').next().unwrap().trim();
        lines.retain(|l| l.split('=').next().map(str::trim) != Some(key));
        lines.push(e.to_string());
    }
    let path = dir.join(name);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path.display().to_string()
}

fn run_to(dir: &Path, config: &str, controller: &str, name: &str) -> (Output, PathBuf) {
    let out = dir.join(name);
    let o = fcbf(&[
        "run",
        "--config",
        config,
        "--controller",
        controller,
        "--out",
        out.to_str().unwrap(),
        "--svg",
        dir.join(format!("{name}.svg")).to_str().unwrap(),
    ]);
    (o, out)
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn reference_filtered_run_reports_infeasible_start() {
    let dir = tempfile::tempdir().unwrap();
    let (o, csv) = run_to(dir.path(), &cfg("fcbf.toml"), "fcbf", "fcbf.csv");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("status=Infeasible at t=0"), "{}", stdout(&o));
    let l = lines(&csv);
    assert_eq!(l[0], HEADER.join(","));
    assert_eq!(l.len(), 2);
    assert!(l[1].ends_with(",Infeasible,"));
}

#[test]
fn hocbf_run_writes_header_plus_51_records() {
    let dir = tempfile::tempdir().unwrap();
    let (o, csv) = run_to(dir.path(), &cfg("hocbf.toml"), "hocbf", "hocbf.csv");
    assert_eq!(o.status.code(), Some(0));
    let l = lines(&csv);
    assert_eq!(l.len(), 52);
    assert!(l.last().unwrap().contains(",Terminal,"));
    // no filter columns on a direct-input run
    let rows = csv_log::read_rows(std::fs::File::open(&csv).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r.uf1.is_none() && r.nu1.is_none()));
}

#[test]
fn sp_hocbf_small_heading_outcome_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run_to(dir.path(), &cfg("sp_hocbf.toml"), "sp-hocbf", "sp.csv");
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("sp-hocbf: status="));
}

#[test]
fn missing_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = fcbf(&["run", "--config", "/no/such/file.toml", "--out", dir.path().join("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot read"), "{}", stderr(&o));
}

#[test]
fn unknown_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_cfg(dir.path(), "typo.toml", "kk3 = 1.0");
    let o = fcbf(&["verify", "--config", &c]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kk3"));
}

#[test]
fn usage_error_exits_1() {
    assert_eq!(fcbf(&["run"]).status.code(), Some(1));
    assert_eq!(fcbf(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn verify_reference_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("verify.toml");
    let o = fcbf(&["verify", "--config", &cfg("fcbf.toml"), "--report", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = std::fs::read_to_string(report).unwrap();
    let parsed: toml::Value = toml::from_str(&text).unwrap();
    assert_eq!(parsed["pass"].as_bool(), Some(true));
    assert_eq!(parsed["derivative_checks"].as_array().unwrap().len(), 5);
}

#[test]
fn verify_goal_on_start_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_cfg(dir.path(), "goal.toml", "goal_x = -3.0\ngoal_y = 0.0");
    let o = fcbf(&["verify", "--config", &c]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("GoalSingularity"));
}

#[test]
fn verify_zero_gain_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_cfg(dir.path(), "zero.toml", "k2 = 0.0");
    let o = fcbf(&["verify", "--config", &c]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("k2"));
}

#[test]
fn sweep_empty_values_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = fcbf(&[
        "sweep", "--config", &cfg("fcbf.toml"), "--param", "alpha", "--values", "", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = fcbf(&[
        "sweep", "--config", &cfg("fcbf.toml"), "--param", "k1", "--values", "1", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn alpha_sweep_reports_smoothness_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = fcbf(&[
        "sweep", "--config", &cfg("fcbf.toml"), "--param", "alpha", "--values", "1,5", "--out-dir",
        out.to_str().unwrap(), "--jobs", "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).matches("smoothness:").count(), 2);
    let summary = lines(&out.join("sweep_summary.csv"));
    assert_eq!(summary.len(), 3);
    assert!(out.join("alpha_00.csv").exists() && out.join("alpha_01.csv.manifest.toml").exists());
    assert!(out.join("sweep_trajectories.svg").exists());
}

#[test]
fn k3_sweep_orders_by_clearance() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_cfg(dir.path(), "fast_bounds.toml", "alpha = 50.0");
    let out = dir.path().join("k3");
    let o = fcbf(&["sweep", "--config", &c, "--param", "k3", "--values", "1,5", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let ordering = text.lines().find(|l| l.starts_with("min_b ordering")).unwrap();
    // the larger barrier gain passes closer to the obstacle
    assert!(ordering.find("k3=5").unwrap() < ordering.find("k3=1").unwrap(), "{ordering}");
}

#[test]
fn compare_needs_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, csv) = run_to(dir.path(), &cfg("hocbf.toml"), "hocbf", "a.csv");
    let o = fcbf(&["compare", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_rejects_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, csv) = run_to(dir.path(), &cfg("hocbf.toml"), "hocbf", "a.csv");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,x,y\n0,1,2\n").unwrap();
    let o = fcbf(&["compare", csv.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schema"));
}

#[test]
fn compare_three_controllers() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (file, kind) in [("fcbf.toml", "fcbf"), ("hocbf.toml", "hocbf"), ("sp_hocbf.toml", "sp-hocbf")] {
        paths.push(run_to(dir.path(), &cfg(file), kind, &format!("{kind}.csv")).1);
    }
    let svg = dir.path().join("cmp.svg");
    let mut args = vec!["compare".to_string()];
    args.extend(paths.iter().map(|p| p.display().to_string()));
    args.extend(["--svg".to_string(), svg.display().to_string()]);
    let o = fcbf(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.contains("Infeasible") && table.contains("Completed"));

    // every plotted point is a pair of fields from one of the source CSVs
    let mut pairs: [HashSet<(String, String)>; 3] = Default::default();
    for p in &paths {
        for row in csv_log::read_rows(std::fs::File::open(p).unwrap()).unwrap() {
            pairs[0].insert((num(row.x), num(row.y)));
            if let (Some(u1), Some(u2)) = (row.u1, row.u2) {
                pairs[1].insert((num(row.t), num(u1)));
                pairs[2].insert((num(row.t), num(u2)));
            }
        }
    }
    for (i, suffix) in ["", "_u1", "_u2"].iter().enumerate() {
        let file = dir.path().join(format!("cmp{suffix}.svg"));
        let points = polyline_points(&std::fs::read_to_string(file).unwrap());
        assert!(!points.is_empty());
        assert!(points.iter().all(|p| pairs[i].contains(p)));
    }
}

#[test]
fn csv_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (file, kind) in [("hocbf.toml", "hocbf"), ("fcbf.toml", "fcbf")] {
        let (_, csv) = run_to(dir.path(), &cfg(file), kind, &format!("{kind}.csv"));
        let bytes = std::fs::read(&csv).unwrap();
        let rows = csv_log::read_rows(bytes.as_slice()).unwrap();
        assert_eq!(csv_log::to_bytes(&rows), bytes);
    }
}

#[test]
fn same_config_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = run_to(dir.path(), &cfg("sp_hocbf.toml"), "sp-hocbf", "a.csv");
    let (_, b) = run_to(dir.path(), &cfg("sp_hocbf.toml"), "sp-hocbf", "b.csv");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn manifest_traces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = cfg("hocbf.toml");
    let (_, csv) = run_to(dir.path(), &config, "hocbf", "m.csv");
    let m = RunManifest::read(&RunManifest::path_for(&csv)).unwrap();
    assert_eq!(m.config_hash, git_blob_hash(&std::fs::read(&config).unwrap()));
    assert_eq!(m.controller, "hocbf");
    assert_eq!(m.status, "Completed");
    assert!(m.outputs.contains(&csv.display().to_string()));
    assert_eq!(m.outputs.len(), 4);
    assert!(m.finished_unix_ms >= m.started_unix_ms);
}

#[test]
fn timing_column_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = fcbf(&["run", "--config", &cfg("hocbf.toml"), "--out", out.to_str().unwrap(), "--timing"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_log::read_rows(std::fs::File::open(&out).unwrap()).unwrap();
    assert!(rows[0].solve_time_s.is_some());
    assert!(rows.last().unwrap().solve_time_s.is_none());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn switchmfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_switchmfg"))
        .args(args)
        .env_remove("SWITCHMFG_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
[model]
modes = 2
dim = 1
points = 16
coupling = "log"
potentials = ["0.1*(1+cos(2*pi*x))", "0.1*(1+sin(2*pi*x))"]
costs = 0.2

[schedule]
lambda_count = 4
eps_start = 0.5
eps_end = 1e-2
eps_count = 4
"#;

#[test]
fn lists_canonical_configs() {
    let o = switchmfg(&["canonical"]);
    assert!(o.status.success());
    let names: Vec<_> = stdout(&o).lines().map(String::from).collect();
    assert!(names.contains(&"wells-log-2".to_string()));
    assert_eq!(names.len(), 6);
}

#[test]
fn validate_prints_every_check() {
    let o = switchmfg(&["validate", "--canonical", "power-bound-1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("configuration is valid"));
    assert!(out.lines().any(|l| l.starts_with("P-2/N") && l.contains("pass")));
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("coupling = \"log\"", "coupling = \"power\"\nalpha = 3.0");
    let o = switchmfg(&["validate", "--config", &write_config(dir.path(), &bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("P-2/N"), "{}", stderr(&o));

    let typo = SMALL.replace("eps_count", "eps_cout");
    let o = switchmfg(&["solve", "--config", &write_config(dir.path(), &typo)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field `eps_cout`"));

    let o = switchmfg(&["solve", "--canonical", "no-such-config"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_writes_a_readable_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = switchmfg(&["solve", "--config", &config, "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("residual"));
    assert!(out.join("report.json").is_file());
    assert!(out.join("theta2.csv").is_file());
    assert!(!out.join(".switchmfg.lock").exists());

    let o = switchmfg(&["report", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("status            ok"));
    assert!(text.contains("u1.csv"));
}

#[test]
fn sweep_prints_the_eps_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("sweep");
    let o = switchmfg(&[
        "sweep-eps",
        "--config",
        &config,
        "--eps-min",
        "0.05",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<_> = text.lines().skip_while(|l| !l.trim_start().starts_with("eps")).skip(1).collect();
    assert!(rows[0].trim_start().starts_with("5.0000e-1"));
    assert!(rows[3].trim_start().starts_with("5.0000e-2"), "{text}");
}

#[test]
fn solver_failure_exits_with_code_three_and_keeps_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fail");
    let o = switchmfg(&[
        "solve",
        "--canonical",
        "wells-active-2",
        "--set",
        "solver.max_iter=1",
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = switchmfg(&["report", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("FAILED (Solver)"), "{}", stdout(&o));
}

#[test]
fn io_problems_exit_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let o = switchmfg(&["solve", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let o = switchmfg(&[
        "solve",
        "--canonical",
        "flat-log-2",
        "--output-dir",
        blocker.join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));

    let locked = dir.path().join("locked");
    fs::create_dir(&locked).unwrap();
    fs::write(locked.join(".switchmfg.lock"), "").unwrap();
    let o = switchmfg(&["solve", "--canonical", "flat-log-2", "--output-dir", locked.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!locked.join("report.json").exists());
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_switchmfg"))
        .args(["solve", "--canonical", "flat-log-2"])
        .env("SWITCHMFG_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("flat-log-2").join("report.json").is_file());
}

#[test]
fn baseline_dry_run_reports_no_drift() {
    let o = switchmfg(&["regen-baselines", "--name", "single-log-1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().count() >= 4);
    assert!(text.lines().all(|l| l.ends_with("ok")), "{text}");
}

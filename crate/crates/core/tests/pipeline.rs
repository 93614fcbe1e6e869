use std::fs;

use switchmfg::canonical::load_canonical;
use switchmfg::config::parse_config;
use switchmfg::pipeline::{read_field_csv, run, RunReport, RunStatus, REPORT_FILE};
use switchmfg::Error;

#[test]
fn runs_are_deterministic_modulo_timings() {
    let mut config = load_canonical("wells-log-2").unwrap().config;
    config.probes.uniqueness = true;
    config.probes.eps_study = true;
    config.probes.seed = 17;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&config, a.path()).unwrap().report;
    let rb = run(&config, b.path()).unwrap().report;
    assert_eq!(ra.clone().without_timings(), rb.clone().without_timings());
    assert_eq!(ra.probes.uniqueness.as_ref().unwrap().seed, 17);
    for f in &ra.files {
        let x = fs::read(a.path().join(&f.path)).unwrap();
        let y = fs::read(b.path().join(&f.path)).unwrap();
        assert_eq!(x, y, "{}", f.path);
    }
}

#[test]
fn report_echoes_the_config_and_lists_fields() {
    let dir = tempfile::tempdir().unwrap();
    let config = load_canonical("wells-log-2").unwrap().config;
    let out = run(&config, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    let report = RunReport::from_json(&text).unwrap();
    assert_eq!(report.config, config);
    assert_eq!(parse_config(&report.config.to_toml()).unwrap(), config);
    assert_eq!(report.status, RunStatus::Ok);
    let study = report.probes.eps_study.as_ref().unwrap();
    assert_eq!(study.cauchy.len(), 9);
    let u1 = report.files.iter().find(|f| f.path == "u1.csv").unwrap();
    let field = read_field_csv(&fs::read_to_string(dir.path().join(&u1.path)).unwrap()).unwrap();
    assert_eq!(field, out.state.u[0]);
    assert!(report.files.iter().any(|f| f.kind == "nu"));
    assert!(report.files.iter().any(|f| f.kind == "obstacle"));
}

#[test]
fn unwritable_output_leaves_nothing_behind() {
    let root = tempfile::tempdir().unwrap();
    let blocker = root.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let config = load_canonical("flat-log-2").unwrap().config;
    let err = run(&config, &blocker.join("out")).unwrap_err();
    assert!(matches!(err.error, Error::Io { .. }));
    let entries: Vec<_> = fs::read_dir(root.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
}

#[test]
fn oracle_probe_respects_the_size_guard() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load_canonical("single-log-1").unwrap().config;
    config.probes.oracle = true;
    let report = run(&config, dir.path()).unwrap().report;
    assert!(report.probes.oracle.unwrap().distance <= 1e-8);

    let dir = tempfile::tempdir().unwrap();
    config.probes.oracle_max_points = 8;
    let report = run(&config, dir.path()).unwrap().report;
    assert!(report.probes.oracle.is_none());
    assert!(report.probes.skipped[0].starts_with("oracle"));
}

use std::fs;
use std::process::Command;

use zdx_cli::{load_driver, run, write_outputs, CliError, ExperimentConfig, Kind};

fn mlgm_config(workers: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Kind::Mlgm);
    c.gamma = Some(0.5);
    c.samples = Some(50_000);
    c.workers = workers;
    c
}

#[test]
fn rerun_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_outputs(&run(&mlgm_config(1)).unwrap(), a.path()).unwrap();
    write_outputs(&run(&mlgm_config(1)).unwrap(), b.path()).unwrap();
    assert_eq!(fs::read(a.path().join("mlgm.csv")).unwrap(), fs::read(b.path().join("mlgm.csv")).unwrap());
}

#[test]
fn worker_count_does_not_change_payload() {
    let one = run(&mlgm_config(1)).unwrap();
    let four = run(&mlgm_config(4)).unwrap();
    assert_eq!(one.tables, four.tables);
    assert_eq!(one.results, four.results);
    assert!(one.reduction_order_sensitive.is_empty());
}

#[test]
fn unknown_driver_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    fs::write(&path, r#"{"kind":"levy","d":1,"atoms":[]}"#).unwrap();
    let err = load_driver(Some(path.to_str().unwrap())).unwrap_err();
    match err {
        CliError::Config { path, message } => {
            assert!(path.starts_with("driver"));
            assert!(message.contains("levy"), "{message}");
        }
        other => panic!("unexpected {other}"),
    }
    assert!(matches!(load_driver(Some("no-such-fixture")), Err(CliError::Config { .. })));
}

#[test]
fn config_validation_names_fields() {
    assert!(matches!(ExperimentConfig::from_json(r#"{"kind":"mlgm","bogus":1}"#), Err(CliError::Config { .. })));
    let mut c = ExperimentConfig::new(Kind::Kernel);
    c.driver = Some("lazy2d".into());
    c.points = vec![vec![1]];
    match run(&c) {
        Err(CliError::Config { path, .. }) => assert_eq!(path, "points[0]"),
        other => panic!("unexpected {other:?}"),
    }
    let mut c = ExperimentConfig::new(Kind::Gk);
    c.driver = Some("lazy1d".into());
    c.obs = Some("fp:1,0".into());
    assert!(matches!(run(&c), Err(CliError::Config { .. })));
}

#[test]
fn config_file_round_trip() {
    let mut c = ExperimentConfig::new(Kind::Suite);
    c.criteria = vec![10];
    let text = serde_json::to_string(&c).unwrap();
    let back = ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(back, c);
    let m = run(&back).unwrap();
    assert!(m.pass);
    assert_eq!(m.provenance.seed, 7);
}

#[test]
fn binary_writes_manifest_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zdx"))
        .args(["--out", dir.path().to_str().unwrap(), "kernel", "--driver", "lazy1d", "--points", "1;2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("kernel.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "p,g_series,g_series_err,g_fourier,g_fourier_err");
    let g1: f64 = lines.next().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((g1 - 4.0).abs() < 1e-6);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["provenance"]["seed"], 7);
    assert_eq!(manifest["pass"], true);

    let bad = Command::new(env!("CARGO_BIN_EXE_zdx"))
        .args(["--out", dir.path().to_str().unwrap(), "kernel", "--driver", "nowhere"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("driver"));
}

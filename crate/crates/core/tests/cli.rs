use std::fs;
use std::process::{Command, Output};

fn loclim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loclim"))
        .args(args)
        .env("LOCLIM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_RATES: &str = r#"
seed = 3
replicates = 8
[process]
hurst = "1/3"
[grid]
eps0 = 0.0625
count = 3
eps_ref = 0.001
steps = 2048
"#;

#[test]
fn constants_prints_value_and_residual() {
    let o = loclim(&["constants", "--name", "Dtilde1", "--H", "1/5"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    let value: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("Dtilde1 = "))
        .expect("value line")
        .trim()
        .parse()
        .unwrap();
    let closed = 3.0 / (2.0 * 0.2 * (2.0 * std::f64::consts::PI).sqrt());
    assert!((value - closed).abs() < 1e-8, "{out}");
    assert!(out.contains("quadrature residual"));
}

#[test]
fn classify_reports_regime() {
    let o = loclim(&["classify", "--H", "1/3"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("CLT"), "{}", stdout(&o));
    let o = loclim(&["classify", "--H", "1/5"]);
    assert!(stdout(&o).starts_with("BOUNDARY_LOG"), "{}", stdout(&o));
}

#[test]
fn simulate_is_reproducible() {
    let args = ["simulate", "--H", "0.3", "--n", "64", "--seed", "5"];
    let a = loclim(&args);
    let b = loclim(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a).lines().count(), 66, "header plus 65 rows");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, format!("{SMALL_RATES}\n[extra]\nfoo = 1\n")).unwrap();
    assert_eq!(loclim(&["rates", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(loclim(&["rates", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(loclim(&["rates"]).status.code(), Some(2));
}

#[test]
fn records_survive_report_rewrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rates.toml");
    fs::write(&cfg, SMALL_RATES).unwrap();
    let records = dir.path().join("records.jsonl");
    let table = dir.path().join("table.csv");
    let o = loclim(&[
        "rates",
        "--config",
        cfg.to_str().unwrap(),
        "--records",
        records.to_str().unwrap(),
        "--table",
        table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&table).unwrap().starts_with("epsilon,scale,"));

    let copy = dir.path().join("copy.jsonl");
    let o = loclim(&["report", "--records", records.to_str().unwrap(), "--rewrite", copy.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("# record 1"));
    assert_eq!(fs::read(&records).unwrap(), fs::read(&copy).unwrap());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use shapehazard::io::{schema_of, write_dataset};
use shapehazard::{rng, sim, Dims, SimConfig, SubjectRecord, SurvivalDataset};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapehazard"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `data` and its schema into `dir`, returning both paths.
fn export(dir: &Path, stem: &str, data: &SurvivalDataset) -> (PathBuf, PathBuf) {
    let csv = dir.join(format!("{stem}.csv"));
    let schema = dir.join(format!("{stem}.schema.json"));
    write_dataset(data, fs::File::create(&csv).unwrap()).unwrap();
    fs::write(&schema, serde_json::to_string(&schema_of(data)).unwrap()).unwrap();
    (csv, schema)
}

fn null_data(n: usize, seed: u64) -> SurvivalDataset {
    let cfg = SimConfig::table(n, [0.0, 0.0, 0.1], 0.3, 1, 11);
    let rate = sim::calibrate_censoring(&cfg).unwrap();
    sim::generate(&cfg, rate, &mut rng::stream(seed, &[0])).unwrap()
}

/// Two groups whose hazards cross at t = 1: one has hazard 3 before and 0
/// after, the other 0 before and 3 after.
fn crossing_data(n: usize, seed: u64) -> SurvivalDataset {
    let mut r = rng::stream(seed, &[0]);
    let subjects = (0..n)
        .map(|i| {
            let z = if r.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let e = -(1.0 - r.gen::<f64>()).ln() / 3.0;
            let t = if z == 1.0 {
                if e < 1.0 {
                    e
                } else {
                    f64::INFINITY
                }
            } else {
                1.0 + e
            };
            let c = -(1.0 - r.gen::<f64>()).ln() / 0.2;
            SubjectRecord::fixed(i.to_string(), t.min(c), t <= c, vec![], vec![z], vec![])
        })
        .collect();
    SurvivalDataset::new(subjects, Dims::new(0, 1, 0)).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn empty_data_file_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("empty.csv");
    fs::write(&data, "").unwrap();
    let out = run(&[
        "fit",
        "--data",
        s(&data),
        "--schema",
        &fixture("va_lung.schema.json"),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn missing_seed_for_bootstrap_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "fit",
        "--data",
        &fixture("va_lung.csv"),
        "--schema",
        &fixture("va_lung.schema.json"),
        "--bootstrap",
        "50",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        let out = run(&[
            "fit",
            "--data",
            &fixture("va_lung.csv"),
            "--schema",
            &fixture("va_lung.schema.json"),
            "--bootstrap",
            "50",
            "--seed",
            "17",
            "--out-dir",
            s(dir.path()),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["fit.json", "baseline.tsv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn va_lung_fit_has_expected_signs() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "fit",
        "--data",
        &fixture("va_lung.csv"),
        "--schema",
        &fixture("va_lung.schema.json"),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("fit.json"));
    let est: Vec<f64> = report["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["estimate"].as_f64().unwrap())
        .collect();
    assert!(est[0] > 0.0 && est[1] < 0.0 && est[2] > 0.0, "{est:?}");
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn zero_profile_reproduces_the_baseline() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "fit",
        "--data",
        &fixture("va_lung.csv"),
        "--schema",
        &fixture("va_lung.schema.json"),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let baseline = fs::read_to_string(dir.path().join("baseline.tsv")).unwrap();
    let rows: Vec<(f64, f64)> = baseline
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split('\t').map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    let picked: Vec<(f64, f64)> = rows.iter().step_by(rows.len() / 5).copied().collect();
    let times = picked.iter().map(|(t, _)| t.to_string()).collect::<Vec<_>>().join(",");
    let pred_dir = dir.path().join("pred");
    let out = run(&[
        "predict",
        "--fit",
        s(&dir.path().join("fit.json")),
        "--times",
        &times,
        "--out-dir",
        s(&pred_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let pred = fs::read_to_string(pred_dir.join("prediction.tsv")).unwrap();
    for (line, (_, expected)) in pred.lines().skip(1).zip(&picked) {
        let got: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected.max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn unknown_profile_covariate_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "predict",
        "--data",
        &fixture("va_lung.csv"),
        "--schema",
        &fixture("va_lung.schema.json"),
        "--profile",
        "age=60",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn negative_hazard_config_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(
        &config,
        r#"{"n": 100, "beta_true": {"beta1": [0.0], "beta2": [0.0], "beta3": [-5.0]},
            "baseline": {"kind": "log1p"}, "censoring": 0.3, "replicates": 1, "seed": 1}"#,
    )
    .unwrap();
    let out = run(&["simulate", "--config", s(&config), "--seed", "1", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("negative"));
}

#[test]
fn smoke_preset_writes_reports() {
    let dir = TempDir::new().unwrap();
    let out = run(&["simulate", "--preset", "smoke", "--seed", "5", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("simulation.json"));
    assert_eq!(report["n"], 100);
    let table = fs::read_to_string(dir.path().join("simulation.tsv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn ks_test_holds_its_level_on_null_data() {
    let dir = TempDir::new().unwrap();
    let mut accepted = 0;
    let runs = 20;
    for r in 0..runs {
        let (csv, schema) = export(dir.path(), &format!("null{r}"), &null_data(100, 100 + r));
        let out_dir = dir.path().join(format!("out{r}"));
        let out = run(&[
            "gof",
            "--data",
            s(&csv),
            "--schema",
            s(&schema),
            "--test",
            "ks",
            "--bootstrap",
            "50",
            "--seed",
            &r.to_string(),
            "--out-dir",
            s(&out_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        if json(&out_dir.join("gof.json"))["ks"]["pvalue"].as_f64().unwrap() > 0.05 {
            accepted += 1;
        }
    }
    assert!(accepted * 100 >= 85 * runs, "only {accepted}/{runs} null runs accepted");
}

#[test]
fn ks_test_detects_crossing_hazards() {
    let dir = TempDir::new().unwrap();
    let (csv, schema) = export(dir.path(), "cross", &crossing_data(500, 3));
    let out = run(&[
        "gof",
        "--data",
        s(&csv),
        "--schema",
        s(&schema),
        "--test",
        "ks",
        "--half-width",
        "4",
        "--bootstrap",
        "50",
        "--seed",
        "1",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let p = json(&dir.path().join("gof.json"))["ks"]["pvalue"].as_f64().unwrap();
    assert!(p <= 0.05, "p = {p}");
    assert!(dir.path().join("discrepancy.tsv").exists());
}

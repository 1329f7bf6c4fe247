use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn semseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semseg"))
        .args(args)
        .env_remove("SEMSEG_SEED")
        .output()
        .expect("run semseg")
}

fn run_ok(args: &[&str]) -> Output {
    let out = semseg(args);
    assert!(
        out.status.success(),
        "semseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small synthetic fixture: `<dir>/syn/{metrics,faults}.csv` plus the ingested `wide.csv`.
fn fixture(dir: &Path, samples: usize) -> (PathBuf, PathBuf) {
    let syn = dir.join("syn");
    run_ok(&["synth", "--out", p(&syn), "--samples", &samples.to_string(), "--seed", "7"]);
    let wide = dir.join("wide.csv");
    run_ok(&["ingest", "--in", p(&syn.join("metrics.csv")), "--out", p(&wide), "--summary", p(&dir.join("clean.json"))]);
    (wide, syn.join("faults.csv"))
}

#[test]
fn synth_writes_three_reproducible_files() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["synth", "--seed", "7", "--samples", "500", "--out", p(&a)]);
    run_ok(&["synth", "--seed", "7", "--samples", "500", "--out", p(&b)]);
    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["faults.csv", "metrics.csv", "truth.json"]);
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn synth_rejects_short_series() {
    let tmp = TempDir::new().unwrap();
    let out = semseg(&["synth", "--samples", "10", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn ingest_writes_wide_csv_and_summary() {
    let tmp = TempDir::new().unwrap();
    let (wide, _) = fixture(tmp.path(), 300);
    let header = fs::read_to_string(&wide).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("timestamp,"));
    let summary = read_json(&tmp.path().join("clean.json"));
    assert_eq!(summary["pivot"]["rows"], 300);
    assert_eq!(summary["load"]["skipped"], 0);
}

#[test]
fn ingest_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out_csv = tmp.path().join("w.csv");
    let missing = semseg(&["ingest", "--in", p(&tmp.path().join("nope.csv")), "--out", p(&out_csv)]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));

    let usage = semseg(&["ingest", "--in", "raw.csv", "--out", p(&out_csv), "--max-missing", "1.5"]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(!out_csv.exists());
}

#[test]
fn analyze_reports_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let (wide, _) = fixture(tmp.path(), 1500);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["analyze", "--in", p(&wide), "--out", p(&a), "--omegas"]);
    run_ok(&["analyze", "--in", p(&wide), "--out", p(&b), "--omegas"]);

    let sep = read_json(&a.join("separability.json"));
    for key in ["icc_micro", "icor_micro", "delta"] {
        assert!(sep[key].is_number(), "{key}");
    }
    assert!(sep["utest"]["p"].is_number());
    assert!(sep["shift"]["icc_shift"].is_number());
    for name in ["separability.json", "pruning.json", "fig2_omegas.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let omegas = fs::read_to_string(a.join("fig2_omegas.csv")).unwrap();
    assert!(omegas.starts_with("set,rho\n"));
    let digest = |d: &Path| read_json(&d.join("manifest.json"))["config_digest"].clone();
    assert_eq!(digest(&a), digest(&b));
}

#[test]
fn analyze_accepts_long_input_and_tau_one_keeps_everything() {
    let tmp = TempDir::new().unwrap();
    let syn = tmp.path().join("syn");
    run_ok(&["synth", "--out", p(&syn), "--samples", "800", "--duplicates", "3"]);
    let out = tmp.path().join("an");
    run_ok(&["analyze", "--in", p(&syn.join("metrics.csv")), "--out", p(&out), "--tau-red", "1.0"]);
    let pruning = read_json(&out.join("pruning.json"));
    let removed = pruning["removed"].as_object().unwrap();
    assert!(removed.values().all(|v| v.as_array().unwrap().is_empty()));

    let bad = semseg(&["analyze", "--in", p(&syn.join("metrics.csv")), "--out", p(&out), "--tau-red", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = TempDir::new().unwrap();
    let (wide, _) = fixture(tmp.path(), 400);
    let out = tmp.path().join("an");
    let status = Command::new(env!("CARGO_BIN_EXE_semseg"))
        .args(["analyze", "--in", p(&wide), "--out", p(&out)])
        .env("SEMSEG_SEED", "99")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read_json(&out.join("manifest.json"))["seed"], 99);
    assert_eq!(read_json(&out.join("separability.json"))["shift"]["seed"], 99);
}

#[test]
fn evaluate_default_grid_cardinality() {
    let tmp = TempDir::new().unwrap();
    let (wide, faults) = fixture(tmp.path(), 2000);
    let out = tmp.path().join("ev");
    run_ok(&["evaluate", "--in", p(&wide), "--faults", p(&faults), "--out", p(&out)]);
    let risk = read_json(&out.join("risk.json"));
    assert_eq!(risk["config"]["n_splits"].as_array().unwrap().len(), 8);
    let skipped = risk["skipped"].as_array().unwrap().len();
    let rows = fs::read_to_string(out.join("risk.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows + 4 * skipped, 4 * 3 * 8 * 2 * 4);
    let gaps = fs::read_to_string(out.join("fig3_gap.csv")).unwrap().lines().count() - 1;
    assert_eq!(gaps + skipped, 3 * 8 * 2 * 4);
    for name in ["fig4_risk_auc.csv", "fig5_condcorr.csv", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn evaluate_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let (wide, faults) = fixture(tmp.path(), 300);
    let out = tmp.path().join("ev");
    let base = ["evaluate", "--in", p(&wide), "--faults", p(&faults), "--out", p(&out)];
    let with = |extra: &[&str]| semseg(&[&base[..], extra].concat());
    assert_eq!(with(&["--models", "logistic,svm"]).status.code(), Some(1));
    assert_eq!(with(&["--splits", "5..2"]).status.code(), Some(1));
    assert_eq!(with(&["--splits", "1..3"]).status.code(), Some(1));
    assert_eq!(with(&["--theta-q", "1.0"]).status.code(), Some(1));
    let no_faults = semseg(&["evaluate", "--in", p(&wide), "--faults", "missing.csv", "--out", p(&out)]);
    assert_eq!(no_faults.status.code(), Some(2));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let run = |dir: &Path| {
        let (wide, faults) = fixture(dir, 1500);
        let out = dir.join("ev");
        run_ok(&[
            "evaluate", "--in", p(&wide), "--faults", p(&faults), "--out", p(&out), "--splits", "2..4", "--windows",
            "600", "--deltas", "600",
        ]);
        ["risk.json", "risk.csv", "fig3_gap.csv", "fig4_risk_auc.csv", "fig5_condcorr.csv"]
            .map(|n| fs::read(out.join(n)).unwrap())
    };
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
}

fn python_jsonschema() -> bool {
    Command::new("python3")
        .args(["-c", "import jsonschema"])
        .status()
        .is_ok_and(|s| s.success())
}

#[test]
fn reports_match_published_schemas() {
    if !python_jsonschema() {
        eprintln!("python3 with jsonschema not available; schema validation skipped");
        return;
    }
    let tmp = TempDir::new().unwrap();
    let (wide, faults) = fixture(tmp.path(), 1500);
    let an = tmp.path().join("an");
    let ev = tmp.path().join("ev");
    run_ok(&["analyze", "--in", p(&wide), "--out", p(&an)]);
    run_ok(&["evaluate", "--in", p(&wide), "--faults", p(&faults), "--out", p(&ev), "--splits", "2..3", "--windows", "600"]);

    let schemas = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas");
    let pairs = [
        ("ingest_summary", tmp.path().join("clean.json")),
        ("separability", an.join("separability.json")),
        ("pruning", an.join("pruning.json")),
        ("manifest", an.join("manifest.json")),
        ("risk", ev.join("risk.json")),
        ("manifest", ev.join("manifest.json")),
        ("truth", tmp.path().join("syn/truth.json")),
    ];
    let script = "import json, sys, jsonschema\n\
                  schema = json.load(open(sys.argv[1]))\n\
                  jsonschema.Draft202012Validator.check_schema(schema)\n\
                  jsonschema.Draft202012Validator(schema).validate(json.load(open(sys.argv[2])))";
    for (schema, doc) in pairs {
        let schema_path = schemas.join(format!("{schema}.schema.json"));
        let out = Command::new("python3").args(["-c", script, p(&schema_path), p(&doc)]).output().unwrap();
        assert!(out.status.success(), "{schema}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

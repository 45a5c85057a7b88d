use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn grudw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grudw")).current_dir(dir).args(args).output().expect("run grudw")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = grudw(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json_file(path: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn tsv(path: PathBuf) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split('\t').map(String::from).collect()).collect()
}

/// Small cohort plus one trained checkpoint per requested fold.
fn fixture(folds: &[usize]) -> TempDir {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "cohort.jsonl", "--n-patients", "120", "--n-numeric", "4", "--n-binary", "2", "--seed", "3"]);
    for f in folds {
        let fold = f.to_string();
        let out = format!("fold{f}.json");
        ok(
            d,
            &[
                "train", "--cohort", "cohort.jsonl", "--out", &out, "--fold", &fold, "--epochs", "2", "--hidden-units", "4",
                "--batch-size", "32", "--learning-rate", "0.01",
            ],
        );
    }
    dir
}

#[test]
fn synth_default_grid_and_reproducible_digest() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "a.jsonl", "--n-patients", "30", "--seed", "9"]);
    ok(d, &["synth", "--out", "b.jsonl", "--n-patients", "30", "--seed", "9"]);
    let a = fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(fs::read(d.join("a.jsonl.truth.jsonl")).unwrap(), fs::read(d.join("b.jsonl.truth.jsonl")).unwrap());
    let header: Value = serde_json::from_str(std::str::from_utf8(&a).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(header["grid"].as_array().unwrap().len(), 110);
    assert_eq!(header["n_patients"], 30);
    let ma = json_file(d.join("a.jsonl.manifest.json"));
    let mb = json_file(d.join("b.jsonl.manifest.json"));
    assert_eq!(ma["outputs"][0]["sha256"], mb["outputs"][0]["sha256"]);
    assert_eq!(ma["extra"]["grid_steps"], 110);
}

#[test]
fn synth_usage_errors() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(grudw(d, &["synth", "--out", "c.jsonl", "--n-patients", "0"]).status.code(), Some(1));
    assert!(!d.join("c.jsonl").exists());
    assert_eq!(grudw(d, &["synth"]).status.code(), Some(1));
    assert_eq!(grudw(d, &["frobnicate"]).status.code(), Some(1));
    fs::write(d.join("spec.toml"), "n_patient = 5\n").unwrap();
    assert_eq!(grudw(d, &["synth", "--out", "c.jsonl", "--spec", "spec.toml"]).status.code(), Some(1));
}

#[test]
fn synth_spec_file_overrides_flags() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.toml"), "n_patients = 12\nn_binary = 1\n[grid]\ndense_window_days = 0.0\n").unwrap();
    ok(d, &["synth", "--out", "c.jsonl", "--spec", "spec.toml", "--n-patients", "40"]);
    let text = fs::read_to_string(d.join("c.jsonl")).unwrap();
    let header: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["n_patients"], 12);
    assert_eq!(header["grid"].as_array().unwrap().len(), 98);
    let m = json_file(d.join("c.jsonl.manifest.json"));
    assert_eq!(m["config"]["n_patients"], 12);
    assert_eq!(m["inputs"][0]["path"], "spec.toml");
}

#[test]
fn train_missing_cohort_leaves_no_outputs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = grudw(d, &["train", "--cohort", "nope.jsonl", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(fs::read_dir(d).unwrap().count(), 0);
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let dir = fixture(&[0]);
    let d = dir.path();
    let ckpt = json_file(d.join("fold0.json"));
    assert_eq!(ckpt["format"], "grudw-checkpoint");
    assert_eq!(ckpt["train_config"]["hidden_units"], 4);
    assert_eq!(ckpt["split"]["plan"]["folds"].as_array().unwrap().len(), 5);
    let log = fs::read_to_string(d.join("fold0.json.log.jsonl")).unwrap();
    let records: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!records.is_empty() && records.len() <= 2);
    for r in &records {
        for key in ["epoch", "train_loss", "val_loss", "wall_time", "grad_norm"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
        assert!(r["wall_time"].is_null());
    }
    let m = json_file(d.join("fold0.json.manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["learning_rate"], 0.01);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn variant_flag_routes_to_lvcf_pipeline() {
    let dir = fixture(&[]);
    let d = dir.path();
    ok(d, &["train", "--cohort", "cohort.jsonl", "--out", "lv.json", "--variant", "lvcf", "--epochs", "1"]);
    let ckpt = json_file(d.join("lv.json"));
    assert_eq!(ckpt["train_config"]["variant"], "gru-lvcf");
    assert_eq!(ckpt["train_config"]["hidden_units"], 80);
    assert_eq!(ckpt["model"]["cell_config"]["input_decay"], false);
    assert_eq!(ckpt["model"]["cell_config"]["mask_inputs"], false);
    // a config file wins over the flag
    fs::write(d.join("cfg.toml"), "hidden_units = 6\nepochs = 1\n").unwrap();
    ok(d, &["train", "--cohort", "cohort.jsonl", "--out", "lv2.json", "--variant", "lvcf", "--hidden-units", "9", "--config", "cfg.toml"]);
    assert_eq!(json_file(d.join("lv2.json"))["train_config"]["hidden_units"], 6);
    assert_eq!(grudw(d, &["train", "--cohort", "cohort.jsonl", "--out", "x.json", "--fold", "5"]).status.code(), Some(1));
}

#[test]
fn eval_single_and_multiple_checkpoints() {
    let dir = fixture(&[0, 1]);
    let d = dir.path();
    ok(d, &["eval", "--checkpoint", "fold0.json", "--cohort", "cohort.jsonl", "--out", "one.json", "--times=-5000,0,365.25"]);
    let one = tsv(d.join("one.json.tsv"));
    assert!(one[0].contains(&"c_index_1y".to_string()));
    assert!(!one[0].iter().any(|h| h.ends_with("_lower")));
    // the first time precedes the grid: undefined, not a failure
    assert_eq!(one[1][1], "NA");
    assert_eq!(one[1][2], "0");
    let rep = json_file(d.join("one.json"));
    assert!(rep["combined"].is_null());
    assert_eq!(rep["models"][0]["report"]["times"].as_array().unwrap().len(), 3);

    ok(
        d,
        &[
            "eval", "--checkpoint", "fold0.json", "--checkpoint", "fold1.json", "--cohort", "cohort.jsonl", "--out", "two.json",
            "--times", "0,365.25", "--aft",
        ],
    );
    let two = tsv(d.join("two.json.tsv"));
    for col in ["c_index_1y_mean", "c_index_1y_lower", "c_index_1y_upper", "parkes_mean"] {
        assert!(two[0].contains(&col.to_string()), "missing {col}");
    }
    let rep = json_file(d.join("two.json"));
    assert_eq!(rep["combined"].as_array().unwrap().len(), 2);
    assert_eq!(rep["aft"].as_array().unwrap().len(), 2);

    ok(d, &["report", "--eval", "two.json", "--out-dir", "plots"]);
    for f in ["c_index.tsv", "l1.tsv", "calibration.tsv", "survival_at_event.tsv", "missingness.tsv", "manifest.json"] {
        assert!(d.join("plots").join(f).exists(), "{f}");
    }
    let c = tsv(d.join("plots/c_index.tsv"));
    assert!(c.iter().any(|r| r[0] == "aft0"));
    assert!(c.iter().any(|r| r[0] == "mean"));
}

#[test]
fn eval_rejects_mismatched_cohort() {
    let dir = fixture(&[0]);
    let d = dir.path();
    ok(d, &["synth", "--out", "other.jsonl", "--n-patients", "20", "--n-numeric", "3", "--n-binary", "2"]);
    let out = grudw(d, &["eval", "--checkpoint", "fold0.json", "--cohort", "other.jsonl", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("r.json").exists());
}

#[test]
fn export_trajectory_selection() {
    let dir = fixture(&[0]);
    let d = dir.path();
    ok(d, &["export-trajectory", "--checkpoint", "fold0.json", "--cohort", "cohort.jsonl", "--out", "t.tsv"]);
    let rows = tsv(d.join("t.tsv"));
    assert_eq!(rows[0][..6], ["patient_id", "day", "kappa", "lambda", "pmst", "q25"].map(String::from));
    assert!(rows[0].contains(&"cumhaz_1y_adj".to_string()));
    let ckpt = json_file(d.join("fold0.json"));
    let held: Vec<&str> = ckpt["split"]["plan"]["held_out"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let cohort = fs::read_to_string(d.join("cohort.jsonl")).unwrap();
    let censored: std::collections::HashMap<String, bool> = cohort
        .lines()
        .skip(1)
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["id"].as_str().unwrap().to_string(), v["censored"].as_bool().unwrap())
        })
        .collect();
    let mut ids: Vec<&String> = rows[1..].iter().map(|r| &r[0]).collect();
    ids.dedup();
    assert!(!ids.is_empty() && ids.len() <= 50);
    for id in &ids {
        assert!(held.contains(&id.as_str()));
        assert!(!censored[*id]);
    }

    ok(d, &["export-trajectory", "--checkpoint", "fold0.json", "--cohort", "cohort.jsonl", "--out", "e.tsv", "--ids", ""]);
    assert_eq!(tsv(d.join("e.tsv")).len(), 1);
    let out = grudw(d, &["export-trajectory", "--checkpoint", "fold0.json", "--cohort", "cohort.jsonl", "--out", "u.tsv", "--ids", "nobody"]);
    assert_eq!(out.status.code(), Some(2));
}

fn calibration_report(bins: Value) -> Value {
    json!({
        "format": "grudw-eval", "version": 1, "split": "validation", "horizons_years": [1.0],
        "models": [{"checkpoint": "x", "fold": 0, "variant": "gru-d", "missingness": [], "report": {
            "horizons_years": [1.0],
            "times": [{"time": 0.0, "grid_time": 0.0, "n_at_risk": 100, "n_uncensored": 50, "c_index": [0.7],
                       "l1": null, "parkes": null, "survival_at_event": null, "calibration": [bins]}]
        }}],
        "combined": null, "aft": []
    })
}

fn write_predictions(path: &Path, values: &[f64]) {
    let mut s = String::from("model\tpatient_id\ttime\tgrid_time\thorizon\tpredicted_survival\tpmst\tremaining\tcensored\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("0\tp{i}\t0\t0\t1\t{v}\t2\t{}\t{}\n", 0.5 + i as f64 * 0.1, i % 3 == 0));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn recalibrate_identity_and_clamping() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let identity: Vec<Value> = (0..10).map(|b| json!({"n": 10, "mean_predicted": b as f64 / 10.0 + 0.05, "observed": b as f64 / 10.0 + 0.05})).collect();
    fs::write(d.join("cv.json"), calibration_report(json!(identity)).to_string()).unwrap();
    let values: Vec<f64> = (0..20).map(|i| i as f64 / 20.0 + 0.01).collect();
    write_predictions(&d.join("p.tsv"), &values);
    ok(d, &["recalibrate", "--cv-report", "cv.json", "--predictions", "p.tsv", "--out", "r.tsv"]);
    let rows = tsv(d.join("r.tsv"));
    assert_eq!(rows[0].last().unwrap(), "recalibrated_survival");
    for r in &rows[1..] {
        let before: f64 = r[5].parse().unwrap();
        let after: f64 = r[9].parse().unwrap();
        assert!((before - after).abs() < 1e-10);
    }
    let m = json_file(d.join("r.tsv.manifest.json"));
    assert!((m["extra"]["maps"][0]["slope"].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert!(m["extra"]["maps"][0]["intercept"].as_f64().unwrap().abs() < 1e-10);
    assert!(d.join("r.tsv.calibration.tsv").exists());

    // observed = 2 * predicted: mapped values above 1 are clamped
    let doubled: Vec<Value> = (0..10).map(|b| json!({"n": 10, "mean_predicted": b as f64 / 20.0, "observed": b as f64 / 10.0})).collect();
    fs::write(d.join("cv2.json"), calibration_report(json!(doubled)).to_string()).unwrap();
    ok(d, &["recalibrate", "--cv-report", "cv2.json", "--predictions", "p.tsv", "--out", "r2.tsv"]);
    let m = json_file(d.join("r2.tsv.manifest.json"));
    assert!((m["extra"]["maps"][0]["slope"].as_f64().unwrap() - 2.0).abs() < 1e-10);
    for r in &tsv(d.join("r2.tsv"))[1..] {
        let before: f64 = r[5].parse().unwrap();
        let after: f64 = r[9].parse().unwrap();
        assert!((0.0..=1.0).contains(&after));
        if before > 0.5 {
            assert_eq!(after, 1.0);
        } else {
            assert!((after - 2.0 * before).abs() < 1e-10);
        }
    }
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = fixture(&[]);
    let d = dir.path();
    let args = ["--cohort", "cohort.jsonl", "--epochs", "2", "--hidden-units", "4", "--batch-size", "16"];
    let mut a = vec!["--threads", "1", "train", "--out", "a.json"];
    a.extend(args);
    let mut b = vec!["--threads", "3", "train", "--out", "b.json"];
    b.extend(args);
    ok(d, &a);
    ok(d, &b);
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    assert_eq!(fs::read(d.join("a.json.log.jsonl")).unwrap(), fs::read(d.join("b.json.log.jsonl")).unwrap());
}

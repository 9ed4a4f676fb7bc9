use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn occupancy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occupancy"))
        .args(args)
        .env_remove("OCCUPANCY_DATA_DIR")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, days: &str, extra: &[&str]) {
    let mut args = vec!["simulate", "--days", days, "--seed", "3", "--out", s(dir)];
    args.extend_from_slice(extra);
    let o = occupancy(&args);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_documents_every_flag() {
    let o = occupancy(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let top = String::from_utf8_lossy(&o.stdout).into_owned();
    for word in ["simulate", "calibrate", "pretrain", "evaluate", "--jobs", "--config"] {
        assert!(top.contains(word), "top-level help lacks {word}");
    }
    let expected: [(&str, &[&str]); 4] = [
        ("simulate", &["--days", "--out", "--seed", "--granularity", "--setup", "--sensor-step", "--sensor-noise"]),
        ("calibrate", &["--series", "--volume", "--out"]),
        (
            "pretrain",
            &["--data", "--net", "--preset", "--train", "--max-epochs", "--patience", "--validation", "--seed", "--stride", "--holdout-days", "--out"],
        ),
        (
            "evaluate",
            &["--real", "--base", "--k", "--seeds", "--modes", "--folds", "--wraparound", "--net", "--train", "--out"],
        ),
    ];
    for (cmd, flags) in expected {
        let o = occupancy(&[cmd, "--help"]);
        let text = String::from_utf8_lossy(&o.stdout).into_owned();
        for flag in flags {
            assert!(text.contains(flag), "{cmd} help lacks {flag}");
        }
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(occupancy(&["simulate", "--days", "0"]).status.code(), Some(1));
    assert_eq!(occupancy(&["simulate"]).status.code(), Some(1));
    assert_eq!(occupancy(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(occupancy(&["--jobs", "0", "simulate", "--days", "1"]).status.code(), Some(1));
}

#[test]
fn simulate_writes_dataset_and_prints_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = occupancy(&["simulate", "--days", "2", "--seed", "1", "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("Dataset Size       2 working days"));
    assert!(out.contains("Presence Rate"));
    for f in ["traces.csv", "co2.csv", "minutes.csv", "stats.json"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let traces = std::fs::read_to_string(data.join("traces.csv")).unwrap();
    assert_eq!(traces.lines().count(), 1 + 2 * 1440);
    let series = std::fs::read_to_string(data.join("co2.csv")).unwrap();
    assert!(series.starts_with("timestamp_s,co2_ppm,occ,window\n0,"));
    assert_eq!(series.lines().count(), 1 + 2 * 1440);
}

#[test]
fn data_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_occupancy"))
        .args(["simulate", "--days", "1"])
        .env("OCCUPANCY_DATA_DIR", &data)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("minutes.csv").exists());
    assert!(!dir.path().join("data").exists());
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    let from_cfg = dir.path().join("cfg-data");
    std::fs::write(&cfg, format!(r#"{{"data_dir": {:?}, "simulation": {{"room": {{"volume": 40.0}}}}}}"#, s(&from_cfg))).unwrap();
    let o = occupancy(&["--config", s(&cfg), "simulate", "--days", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(from_cfg.join("minutes.csv").exists());

    let flag = dir.path().join("flag-data");
    let o = occupancy(&["--config", s(&cfg), "simulate", "--days", "1", "--out", s(&flag)]);
    assert!(o.status.success());
    assert!(flag.join("minutes.csv").exists());

    std::fs::write(&cfg, r#"{"simulation": {"room": {"volume": -1.0}}}"#).unwrap();
    let o = occupancy(&["--config", s(&cfg), "simulate", "--days", "1", "--out", s(&flag)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    std::fs::write(&cfg, "{ not json").unwrap();
    let o = occupancy(&["--config", s(&cfg), "simulate", "--days", "1", "--out", s(&flag)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn calibrate_recovers_a_synthetic_decay() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("decay.csv");
    let lambda = 0.0046 / 77.5;
    let mut text = String::from("timestamp_s,co2_ppm\n");
    for i in 0..=480 {
        let t = 60.0 * i as f64;
        text.push_str(&format!("{t},{}\n", 360.0 + 840.0 * (-lambda * t).exp()));
    }
    std::fs::write(&series, text).unwrap();
    let out = dir.path().join("fit.json");
    let o = occupancy(&["calibrate", "--series", s(&series), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let got = fit["lambda"].as_f64().unwrap();
    assert!((got / lambda - 1.0).abs() < 0.01, "{fit}");
    assert!((fit["infiltration_flow"].as_f64().unwrap() - 0.0046).abs() < 5e-5);
}

#[test]
fn calibrate_reports_missing_and_flat_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("fit.json");
    let o = occupancy(&["calibrate", "--series", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.csv"));

    let flat = dir.path().join("flat.csv");
    let rows: String = (0..200).map(|i| format!("{},{}\n", i * 60, 500)).collect();
    std::fs::write(&flat, format!("timestamp_s,co2_ppm\n{rows}")).unwrap();
    let o = occupancy(&["calibrate", "--series", s(&flat), "--out", s(&out)]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("no decay"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn malformed_csv_is_a_data_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "timestamp_s,co2_ppm\n0,400\n60,abc\n").unwrap();
    let o = occupancy(&["calibrate", "--series", s(&bad), "--out", s(&dir.path().join("f.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn pretrain_and_evaluate_with_tiny_network() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "4", &[]);
    let weights = dir.path().join("w").join("base.json");
    let o = occupancy(&[
        "pretrain", "--data", s(&data), "--preset", "tiny", "--max-epochs", "2", "--stride", "3", "--holdout-days", "1",
        "--out", s(&weights),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("w/base.json.report.json")).unwrap()).unwrap();
    assert_eq!(report["training_days"], 3);
    assert_eq!(report["holdout"]["days"], 1);
    assert!(report["training"]["epochs_trained"].as_u64().unwrap() <= 2);

    let out = dir.path().join("report.json");
    let o = occupancy(&[
        "evaluate", "--real", s(&data), "--base", s(&weights), "--k", "1,3", "--seeds", "2", "--max-epochs", "1",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("Transfer Model") && table.contains("3 Days"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    // k=1: 4 folds; k=3: 2 folds; 2 seeds, 3 modes.
    assert_eq!(report["reports"][0]["results"].as_array().unwrap().len(), 4 * 2 * 3);
    assert_eq!(report["reports"][1]["results"].as_array().unwrap().len(), 2 * 2 * 3);
    assert!(out.with_extension("txt").exists());
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert!(csv.starts_with("k,fold,seed,mode,accuracy,f1,epochs_to_best\n"));
}

#[test]
fn evaluate_without_base_skips_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "3", &["--sensor-step", "30"]);
    let out = dir.path().join("report.json");
    let o = occupancy(&[
        "evaluate", "--real", s(&data.join("sensor.csv")), "--preset", "tiny", "--k", "1", "--seeds", "1",
        "--max-epochs", "1", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let modes: Vec<&str> = report["reports"][0]["summary"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["mode"].as_str().unwrap())
        .collect();
    assert_eq!(modes, ["cold", "logistic"]);
    assert_eq!(report["days"], 3);
}

#[test]
fn evaluate_rejects_k_without_test_days() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "7", &[]);
    let out = dir.path().join("report.json");
    let o = occupancy(&["evaluate", "--real", s(&data), "--k", "7", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn mismatched_base_weights_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    simulate(&data, "3", &[]);
    let weights = dir.path().join("base.json");
    let o = occupancy(&["pretrain", "--data", s(&data), "--preset", "tiny", "--max-epochs", "1", "--out", s(&weights)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = occupancy(&[
        "evaluate", "--real", s(&data), "--base", s(&weights), "--preset", "reduced", "--k", "1", "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("conv.weight"), "{}", stderr(&o));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    simulate(&a, "2", &["--granularity", "1s", "--sensor-step", "5", "--sensor-noise", "4"]);
    let o = occupancy(&[
        "--jobs", "1", "simulate", "--days", "2", "--seed", "3", "--out", s(&b), "--granularity", "1s", "--sensor-step",
        "5", "--sensor-noise", "4",
    ]);
    assert!(o.status.success());
    for f in ["traces.csv", "co2.csv", "minutes.csv", "sensor.csv", "stats.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

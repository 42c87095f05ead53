use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mfgp");

fn mfgp(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.json");
    fs::write(
        &path,
        r#"{"schema_version": 1, "problem": "illustrative", "models": ["gp-hf", "mf-dgp-em"],
            "hf_sizes": [5], "lf_size": 10, "test_size": 40, "repetitions": 1,
            "save_checkpoints": true,
            "train": {"iterations": 200, "warmup": 50, "predict_samples": 5}}"#,
    )
    .unwrap();
    path
}

#[test]
fn run_report_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let r = mfgp(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next().unwrap(), mfgp_cli::RESULTS_HEADER);
    assert_eq!(lines.count(), 2);
    assert!(out.join("summary.md").exists());
    assert!(out.join("traces/mf-dgp-em_hf5_rep0.csv").exists());
    assert!(out.join("predictions/gp-hf_hf5_rep0.csv").exists());
    assert!(out.join("predictions/design_hf5_rep0.csv").exists());

    let report = dir.path().join("report");
    let r = mfgp(&["report", "--results", out.join("results.csv").to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let md = fs::read_to_string(report.join("report.md")).unwrap();
    assert!(md.contains("| 5 | mf-dgp-em |"));
    assert!(report.join("illustrative_rmse.svg").exists());
    assert!(report.join("elbo_traces.svg").exists());
    let svg = fs::read_to_string(report.join("mf-dgp-em_hf5_rep0_prediction.svg")).unwrap();
    assert!(svg.contains(r#"class="band""#));

    let input = dir.path().join("x.csv");
    fs::write(&input, "x1\n0.1\n0.5\n0.9\n").unwrap();
    let ckpt = out.join("checkpoints/mf-dgp-em_hf5_rep0.json");
    let args = ["predict", "--checkpoint", ckpt.to_str().unwrap(), "--input", input.to_str().unwrap(), "--fidelity", "2"];
    let r = mfgp(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "x1,mean,var,var_y");
    assert_eq!(rows.len(), 4);
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        assert!(v[2] >= 0.0 && v[3] > v[2]);
    }
    // Same seed, same bytes.
    assert_eq!(mfgp(&args).stdout, text.as_bytes());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let r = mfgp(&["run", "--config", dir.path().join("missing.json").to_str().unwrap(), "--out", out]);
    assert_eq!(r.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"schema_version": 7, "problem": "park", "models": ["bc"], "hf_sizes": [4]}"#).unwrap();
    let r = mfgp(&["run", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("schema_version"));

    fs::write(&bad, r#"{"schema_version": 1, "problem": "park", "models": ["bc"], "hf_sizes": [4], "colour": 1}"#).unwrap();
    assert_eq!(mfgp(&["run", "--config", bad.to_str().unwrap(), "--out", out]).status.code(), Some(2));

    let results = dir.path().join("results.csv");
    fs::write(&results, "model,rmse\nbc,1.0\n").unwrap();
    let r = mfgp(&["report", "--results", results.to_str().unwrap(), "--out", out]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn malformed_dataset_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("hf.csv"), "fidelity,x1,y\n2,0.5,abc\n").unwrap();
    fs::write(dir.path().join("lf.csv"), "fidelity,x1,y\n1,0.5,1.0\n1,0.2,0.1\n").unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "models": ["gp-hf"],
            "data": {"hf": "hf.csv", "lf": "lf.csv", "nominal_linear": {"a": [[1.0]], "b": [0.0]},
                     "hf_bounds": [[0, 1]], "lf_bounds": [[0, 1]]}}"#,
    )
    .unwrap();
    let r = mfgp(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn all_failed_cells_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // A constant HF response cannot be standardized, so every cell fails.
    fs::write(dir.path().join("hf.csv"), "fidelity,x1,y\n2,0.1,1.0\n2,0.5,1.0\n2,0.9,1.0\n").unwrap();
    fs::write(dir.path().join("lf.csv"), "fidelity,x1,y\n1,0.1,0.3\n1,0.4,0.1\n1,0.8,0.7\n1,0.6,0.2\n").unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "models": ["gp-hf", "bc"],
            "data": {"hf": "hf.csv", "lf": "lf.csv", "nominal_linear": {"a": [[1.0]], "b": [0.0]},
                     "hf_bounds": [[0, 1]], "lf_bounds": [[0, 1]]}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let r = mfgp(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    // The failures are still recorded.
    let rows = mfgp_cli::read_results(&out.join("results.csv")).unwrap();
    assert!(rows.iter().all(|r| r.failed()));
}

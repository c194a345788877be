//! End-to-end pipeline checks through the binary.

use std::path::Path;
use std::process::Command;

fn sslab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sslab"))
}

fn write_config(dir: &Path, n: usize, extra: &str) -> std::path::PathBuf {
    let path = dir.join("cfg.json");
    let out = dir.join("out");
    let body = format!(
        r#"{{
  "system": {{"name": "CD3"}},
  "n": {n},
  "seed": 7,
  "grid": {{"levels": [0.5]}},
  "output_dir": "{}"{}
}}"#,
        out.display(),
        extra
    );
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn simulate_writes_dataset_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 200, "");
    let output = sslab()
        .args(["simulate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert!(dir.path().join("out/dataset.csv").exists());
    assert!(dir.path().join("out/dataset.meta.json").exists());

    // Same config, same bytes.
    let first = std::fs::read(dir.path().join("out/dataset.csv")).unwrap();
    let rerun = sslab()
        .args(["simulate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(rerun.status.success());
    let second = std::fs::read(dir.path().join("out/dataset.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn oracle_verify_passes_on_cd3() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 100, "");
    let output = sslab()
        .args(["oracle-verify", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "{output:?}");
    assert!(stdout.contains("pass"), "{stdout}");
}

#[test]
fn symmetry_check_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 100, "");
    let output = sslab()
        .args(["symmetry-check", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let report_path = dir.path().join("out/symmetry_check.json");
    assert!(report_path.exists());
    assert!(dir.path().join("out/residual_field.csv").exists());

    // Render the report through the report subcommand.
    let rendered = dir.path().join("rendered.csv");
    let output = sslab()
        .args(["report", "--report"])
        .arg(&report_path)
        .args(["--out"])
        .arg(&rendered)
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let text = std::fs::read_to_string(&rendered).unwrap();
    assert!(text.starts_with("point_id,level_i,level_j,residual,channel"));
}

#[test]
fn test_subcommand_produces_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let extra = r#",
  "bootstrap_b": 19,
  "estimator": {"grid_points": 401, "grid_expand": 0.05, "min_effective": 50.0,
                 "density_floor": 0.001, "bandwidth_scale_w": 4.0, "bandwidth_scale_y": 1.0}"#;
    let config = write_config(dir.path(), 20_000, extra);
    let sim = sslab()
        .args(["simulate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(sim.status.success(), "{sim:?}");

    let output = sslab()
        .args(["test", "--config"])
        .arg(&config)
        .args(["--data"])
        .arg(dir.path().join("out/dataset.csv"))
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/test_report.json")).unwrap())
            .unwrap();
    let p = report["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert_eq!(report["replicates"].as_array().unwrap().len(), 19);
}

#[test]
fn unknown_config_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"system": {"name": "CD3"}, "n": 10, "seed": 1, "typo_key": true}"#,
    )
    .unwrap();
    let output = sslab()
        .args(["simulate", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("typo_key"), "{stderr}");
}

#[test]
fn missing_seed_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"system": {"name": "CD3"}, "n": 10}"#).unwrap();
    let output = sslab()
        .args(["simulate", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}

#[test]
fn unknown_subcommand_exits_2() {
    let output = sslab().args(["frobnicate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn set_overrides_are_applied() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 100, "");
    let output = sslab()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--set", "n=37"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("37 rows"), "{stdout}");
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 300, "");
    let mut reports = Vec::new();
    for threads in ["1", "2"] {
        let output = sslab()
            .env("SSLAB_THREADS", threads)
            .args(["symmetry-check", "--config"])
            .arg(&config)
            .output()
            .unwrap();
        assert!(output.status.success(), "{output:?}");
        let mut report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("out/symmetry_check.json")).unwrap(),
        )
        .unwrap();
        report["meta"]["runtime_s"] = serde_json::json!(0.0);
        reports.push(report);
    }
    assert_eq!(reports[0], reports[1]);
}

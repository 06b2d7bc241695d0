//! Black-box tests of the `capgate` binary: output formats, exit codes,
//! cross-command round-trips, and the frozen estimate report.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_capgate"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

#[test]
fn estimate_report_matches_frozen_golden() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "estimate",
        fixture("golden_input.csv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let got = read(dir.path(), "estimate.json");
    let want = std::fs::read(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/estimate_golden.json"),
    )
    .unwrap();
    assert_eq!(
        got,
        want,
        "estimate.json deviates from the frozen report; if the change is \
         intentional, regenerate the golden file"
    );
}

#[test]
fn missing_input_file_exits_2_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "estimate",
            "/definitely/not/here.csv",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("does not exist"), "stderr: {stderr}");
    assert!(
        !dir.path().join("manifest.json").exists(),
        "failed run must not leave a manifest"
    );
}

#[test]
fn schema_violation_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(
        &input,
        "dimension_id,lsl,usl,nominal,value\na,1,0,,0.5\na,1,0,,0.6\n",
    )
    .unwrap();
    let out = bin()
        .args(["estimate", input.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("schema violation at line 2"), "stderr: {stderr}");
}

#[test]
fn computation_failure_exits_2_for_constant_dimension() {
    // A dimension with zero spread cannot be estimated; with no other
    // dimensions the dataset is unusable, which is an input-data problem.
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("const.csv");
    std::fs::write(
        &input,
        "dimension_id,lsl,usl,nominal,value\na,0,10,,5\na,0,10,,5\na,0,10,,5\n",
    )
    .unwrap();
    let out = bin()
        .args(["estimate", input.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["surface", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gnuplot_script_requires_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "surface",
            "--gnuplot-script",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--format csv"), "stderr: {stderr}");
}

#[test]
fn gnuplot_script_rejected_for_non_plot_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "margin",
            "--n",
            "32",
            "--gnuplot-script",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_threads_rejected() {
    let out = bin().args(["margin", "--n", "32", "--threads", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("at least 1"), "stderr: {stderr}");
}

#[test]
fn margin_stdout_equals_file_and_carries_calibration_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&[
        "margin",
        "--n",
        "32",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let stdout: serde_json::Value = serde_json::from_slice(&out.stdout).expect("stdout is JSON");
    let file: serde_json::Value =
        serde_json::from_slice(&read(dir.path(), "margin.json")).unwrap();
    assert_eq!(stdout, file);
    for key in ["kappa", "margin", "adjusted_threshold", "sigma_c", "alpha", "n", "c0"] {
        assert!(stdout.get(key).is_some(), "missing key {key}");
    }
}

#[test]
fn synth_output_round_trips_through_every_reader() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    run_ok(&[
        "synth",
        "--group",
        "1.2,24,2",
        "--group",
        "1.5,32,2",
        "--seed",
        "11",
        "--out",
        out_dir,
    ]);
    let csv_path = dir.path().join("synthetic.csv");

    // The library reader accepts the generated file.
    let records =
        capgate::dataset::parse_dimensions(&csv_path, capgate::dataset::DatasetFormat::LongCsv)
            .expect("synthetic dataset parses");
    assert_eq!(records.len(), 4);
    assert_eq!(records[0].n(), 24);

    // estimate and bootstrap both consume it end to end.
    let est_dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "estimate",
        csv_path.to_str().unwrap(),
        "--out",
        est_dir.path().to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&read(est_dir.path(), "estimate.json")).unwrap();
    assert_eq!(report["dimension_count"], 4);
    assert_eq!(report["failures"].as_array().unwrap().len(), 0);

    let boot_dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "bootstrap",
        csv_path.to_str().unwrap(),
        "--reps",
        "1000",
        "--seed",
        "11",
        "--out",
        boot_dir.path().to_str().unwrap(),
    ]);
    let analysis: serde_json::Value =
        serde_json::from_slice(&read(boot_dir.path(), "bootstrap.json")).unwrap();
    assert_eq!(analysis["summaries"].as_array().unwrap().len(), 4);
    for s in analysis["summaries"].as_array().unwrap() {
        let flip = s["flip_rate"].as_f64().unwrap();
        assert!((0.0..=0.5).contains(&flip));
    }
}

#[test]
fn threshold_changes_decisions_but_not_estimates() {
    let input = fixture("golden_input.csv");
    let run_with = |c0: &str| -> serde_json::Value {
        let dir = tempfile::tempdir().unwrap();
        run_ok(&[
            "estimate",
            input.to_str().unwrap(),
            "--c0",
            c0,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        serde_json::from_slice(&read(dir.path(), "estimate.json")).unwrap()
    };
    let strict = run_with("1.33");
    let lenient = run_with("1.0");

    let dim = |report: &serde_json::Value, id: &str| -> serde_json::Value {
        report["dimensions"]
            .as_array()
            .unwrap()
            .iter()
            .find(|d| d["dimension_id"] == id)
            .unwrap()
            .clone()
    };
    for id in ["tied_exact", "lower_active", "mid_capability", "upper_only"] {
        let a = dim(&strict, id);
        let b = dim(&lenient, id);
        // Point estimates are threshold-independent.
        for key in ["cpk_hat", "mean", "sd", "cpu", "cpl", "lcb"] {
            assert_eq!(a[key], b[key], "{id}.{key} changed with c0");
        }
    }
    // The mid dimension (cpk_hat ≈ 1.16) flips its verdict between thresholds.
    assert_eq!(dim(&strict, "mid_capability")["accept_threshold"], false);
    assert_eq!(dim(&lenient, "mid_capability")["accept_threshold"], true);
}

#[test]
fn manifest_lists_all_outputs_with_digests() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "surface",
        "--cpk-min",
        "1.3",
        "--cpk-max",
        "1.4",
        "--cpk-step",
        "0.1",
        "--n",
        "16",
        "--reps",
        "1000",
        "--format",
        "csv",
        "--gnuplot-script",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(dir.path(), "manifest.json")).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    let names: Vec<&str> = outputs.iter().map(|o| o["file"].as_str().unwrap()).collect();
    assert_eq!(names, ["surface.csv", "surface.gp"]);
    for o in outputs {
        let name = o["file"].as_str().unwrap();
        let bytes = read(dir.path(), name);
        assert_eq!(o["bytes"].as_u64().unwrap() as usize, bytes.len());
        let digest = format!("{:x}", <sha2::Sha256 as sha2::Digest>::digest(&bytes));
        assert_eq!(o["sha256"].as_str().unwrap(), digest, "digest mismatch for {name}");
    }
    assert_eq!(manifest["command"], "surface");
    assert_eq!(manifest["base_seed"], 0);
}

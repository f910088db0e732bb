//! Behaviour of the `degenlap` binary: outputs, exit codes and overrides.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn degenlap(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degenlap")).args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn every_run_writes_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    let o = degenlap(&["weights", "--fixture", "constant", "--balls", "32", "--budget", "32"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = json(&out.join("resolved-config.json"));
    assert_eq!(cfg["subcommand"], "weights");
    assert_eq!(cfg["balls"], 32);
    let w = json(&out.join("weights.json"));
    assert_eq!(w["schema"], "degenlap/1");
    assert_eq!(w["report"]["estimates"]["ap"]["value"], 1.0);
    assert_eq!(csv_header(&out.join("worst-cases.csv")), "class,radius,ratio,c0,c1");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"fixture": "constant", "balls": 16, "budget": 16, "seed": 9}"#).unwrap();
    let out = tmp.path().join("o");
    let o = degenlap(&["weights", "--config", cfg.to_str().unwrap(), "--balls", "24"], &out);
    assert!(o.status.success());
    let r = json(&out.join("resolved-config.json"));
    assert_eq!((r["balls"].as_u64(), r["budget"].as_u64(), r["seed"].as_u64()), (Some(24), Some(16), Some(9)));
}

#[test]
fn invalid_configs_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"cels": 8}"#).unwrap();
    for args in [
        vec!["weights", "--p", "0.5"],
        vec!["solve", "--fixture", "nope"],
        vec!["weights", "--config", bad.to_str().unwrap()],
        vec!["weights", "--fixture", "constant", "--weight", "pow:1"],
    ] {
        let o = degenlap(&args, &tmp.path().join("x"));
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn missing_config_file_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let o = degenlap(&["weights", "--config", "/nonexistent/run.json"], &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn non_integrable_weight_is_flagged_not_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w");
    let o = degenlap(&["weights", "--weight", "pow:-3", "--p", "2", "--balls", "128", "--budget", "128"], &out);
    assert!(o.status.success());
    let flags = json(&out.join("weights.json"))["flags"].clone();
    assert!(flags.as_array().unwrap().iter().any(|f| f == "unbounded-suspected:A_p"), "{flags}");
}

#[test]
fn solve_then_diagnose_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let solved = tmp.path().join("s");
    let o = degenlap(&["solve", "--cells", "32"], &solved);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = json(&solved.join("solve-report.json"));
    assert!(rep["max_error_vs_boundary_function"].as_f64().unwrap() <= 5e-3);
    assert_eq!(rep["report"]["converged"], true);
    assert_eq!(csv_header(&solved.join("solution.csv")), "x0,x1,value");
    assert!(std::fs::read(solved.join("heatmap.pgm")).unwrap().starts_with(b"P5\n33 33\n255\n"));

    let sol = solved.join("solution.csv");
    let diag = tmp.path().join("d");
    let o = degenlap(&["diagnose", "--cells", "32", "--probe-grid", "4", "--solution", sol.to_str().unwrap()], &diag);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&diag.join("diagnostics.json"))["report"]["probes"].as_array().unwrap().len(), 16);
    assert!(diag.join("continuity.pgm").exists());

    let o = degenlap(&["diagnose", "--cells", "16", "--solution", sol.to_str().unwrap()], &tmp.path().join("m"));
    assert_eq!(o.status.code(), Some(2), "grid/solution mismatch must be a config error");
}

#[test]
fn three_dimensional_solves_are_downsampled() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("z");
    // Only the gate is under test: stop after one Newton step.
    let o = degenlap(&["solve", "--fixture", "zhong-log", "--cells", "64", "--max-iterations", "1"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = json(&out.join("solve-report.json"))["grid"].clone();
    assert_eq!((grid["cells"].as_u64(), grid["downsampled_from"].as_u64()), (Some(48), Some(64)));
}

#[test]
fn distortion_of_a_stretch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = degenlap(&["distortion", "--map", "diag:2,1,1", "--points", "20"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("distortion-points.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| degenlap::io::parse_float(v).unwrap()).collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert!((col("k_o") - 4.0).abs() < 1e-8 && (col("k_i") - 2.0).abs() < 1e-8);
    assert_eq!(json(&out.join("distortion.json"))["point_count"], 20);
}

#[test]
fn catalog_lists_and_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    assert!(degenlap(&["catalog"], &out).status.success());
    assert_eq!(json(&out.join("catalog.json"))["fixtures"].as_array().unwrap().len(), 4);
    let out = tmp.path().join("v");
    let o = degenlap(&["catalog", "--fixture", "constant", "--balls", "32", "--budget", "32", "--ellipticity-samples", "500"], &out);
    assert!(o.status.success());
    assert_eq!(json(&out.join("fixture-report.json"))["passed"], true);
}

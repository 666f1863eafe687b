use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairverify"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/scenarios")
        .join(name)
}

fn strip_timings(mut v: serde_json::Value) -> serde_json::Value {
    v.as_object_mut().unwrap().remove("timings");
    v
}

#[test]
fn biased_toy_exits_one_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let status = bin()
        .args([
            "run",
            fixture("linear-classifier-toy.json").to_str().unwrap(),
            "--format",
            "json",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["verdict"], "biased");
    assert_eq!(report["exit_code"], 1);
    let w = &report["verifier"]["witness"];
    assert_eq!(w["x"], serde_json::json!([0.0]));
    assert_eq!(w["x_prime"], serde_json::json!([1.0]));
    assert_eq!(w["changes"][0]["feature"], 0);
}

#[test]
fn all_pinned_exits_zero() {
    let status = bin()
        .args(["run", fixture("all-pinned.json").to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn both_mode_has_sections_and_timings() {
    let out = bin()
        .args([
            "run",
            fixture("linear-planted-1.json").to_str().unwrap(),
            "--mode",
            "both",
            "--format",
            "json",
        ])
        .args(["--budget", "2000", "--seed", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["verifier"].is_object());
    assert!(report["tester"].is_object());
    for phase in ["parse", "build", "solve", "aggregate", "test"] {
        assert!(report["timings"][phase].is_number(), "{phase}");
    }
}

#[test]
fn report_bound_is_min_of_subproblems() {
    let out = bin()
        .args([
            "run",
            fixture("mixed-relaxed.json").to_str().unwrap(),
            "--format",
            "json",
        ])
        .output()
        .unwrap();
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let v = &report["verifier"];
    let min = v["subproblems"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["bound"].as_f64().unwrap_or(f64::INFINITY))
        .fold(f64::INFINITY, f64::min);
    assert_eq!(v["bound"].as_f64().unwrap(), min);
}

#[test]
fn deterministic_reports() {
    let run = || {
        let out = bin()
            .args([
                "run",
                fixture("rbf-planted-2.json").to_str().unwrap(),
                "--mode",
                "both",
                "--format",
                "json",
            ])
            .args(["--workers", "3", "--seed", "11", "--budget", "3000"])
            .output()
            .unwrap();
        strip_timings(serde_json::from_slice(&out.stdout).unwrap())
    };
    assert_eq!(
        serde_json::to_string(&run()).unwrap(),
        serde_json::to_string(&run()).unwrap()
    );
}

#[test]
fn usage_and_parse_errors_exit_three() {
    assert_eq!(bin().args(["run"]).status().unwrap().code(), Some(3));
    assert_eq!(bin().args(["frobnicate"]).status().unwrap().code(), Some(3));
    assert_eq!(
        bin()
            .args(["run", "/nonexistent/scenario.json"])
            .status()
            .unwrap()
            .code(),
        Some(3)
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"model": {"family": "linear", "weights": [1], "bias": 0}}"#,
    )
    .unwrap();
    let out = bin().arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
    assert_eq!(bin().arg("--help").status().unwrap().code(), Some(0));
    assert_eq!(bin().arg("--version").status().unwrap().code(), Some(0));
}

#[test]
fn test_mode_exit_codes() {
    let code = |name: &str| {
        bin()
            .args([
                "run",
                fixture(name).to_str().unwrap(),
                "--mode",
                "test",
                "--budget",
                "5000",
            ])
            .status()
            .unwrap()
            .code()
    };
    assert_eq!(code("linear-planted-2.json"), Some(1));
    assert_eq!(code("linear-masked-2.json"), Some(2));
}

#[test]
fn generate_then_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.json");
    let status = bin()
        .args([
            "generate", "--family", "linear", "--n", "2", "--seed", "5", "--bias", "planted",
            "--out",
        ])
        .arg(&path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let oracle = bin()
        .arg("oracle")
        .arg(&path)
        .args(["--grid", "11"])
        .status()
        .unwrap();
    assert_eq!(oracle.code(), Some(1));
    let run = bin().arg("run").arg(&path).status().unwrap();
    assert_eq!(run.code(), Some(1));
    assert_eq!(
        bin()
            .args(["generate", "--family", "rbf", "--n", "1"])
            .status()
            .unwrap()
            .code(),
        Some(3)
    );
}

use std::path::PathBuf;

use fairverify::cli::{parse_scenario, ScenarioFile};
use fairverify::model::VerdictKind;
use fairverify::verify::{meta_verify, VerifyConfig};

fn fixtures() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scenarios");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    files
}

#[test]
fn round_trip_identity() {
    let files = fixtures();
    assert!(files.len() >= 20, "only {} scenario files", files.len());
    for path in &files {
        let text = std::fs::read_to_string(path).unwrap();
        let (file, task) =
            parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let emitted = file.to_json();
        let (again, task_again) = parse_scenario(&emitted).unwrap();
        assert_eq!(file, again, "{}", path.display());
        assert_eq!(task, task_again, "{}", path.display());
        assert_eq!(emitted, again.to_json(), "{}", path.display());
        let _: ScenarioFile = serde_json::from_str(&emitted).unwrap();
    }
}

#[test]
fn fixture_verdicts() {
    for path in fixtures() {
        let name = path.file_stem().unwrap().to_string_lossy().to_string();
        let (file, task) = parse_scenario(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let cfg = VerifyConfig {
            rbf: file.rbf_config(),
            ..VerifyConfig::default()
        };
        let out = meta_verify(&task, &cfg).unwrap();
        let expected = if name.contains("masked") || name == "all-pinned" {
            VerdictKind::NoBias
        } else {
            VerdictKind::Biased
        };
        assert_eq!(out.verdict.kind(), expected, "{name}");
        if let fairverify::model::Verdict::Biased { instance } = &out.verdict {
            assert!(task.check(&instance.x, &instance.x_prime), "{name}");
        }
    }
}

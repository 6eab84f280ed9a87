use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sgsp_core::environments::build_hart_game;

fn sgsp(args: &[&str], workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgsp"))
        .args(args)
        .env("SGSP_WORKERS", workers)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write(path: &Path, text: &str) -> String {
    fs::write(path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        &dir.path().join("hart.json"),
        r#"{"experiment": "hart", "algorithms": ["on-sgsp", "off-sgsp"], "seeds": [1, 2],
            "sgsp": {"max_iters": 1000}, "output_dir": "runs"}"#,
    );
    let out = sgsp(&["run", &config], "2");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("hart / off-sgsp (2 runs)"));
    let runs = dir.path().join("runs");
    assert!(runs.join("hart_on-sgsp_seed2.csv").is_file());
    assert!(runs.join("hart_off-sgsp_seed1.json").is_file());
    assert!(runs.join("summary.csv").is_file());

    fs::remove_file(runs.join("summary.txt")).unwrap();
    let out = sgsp(&["summarize", runs.to_str().unwrap()], "1");
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("hart / on-sgsp (2 runs)"));
    assert!(runs.join("summary.txt").is_file());
}

#[test]
fn invalid_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(
        &dir.path().join("empty.json"),
        r#"{"experiment": "hart", "algorithms": ["on-sgsp"], "seeds": []}"#,
    );
    let out = sgsp(&["run", &empty], "1");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed list is empty"));

    let missing = dir.path().join("absent.json");
    assert_eq!(sgsp(&["run", missing.to_str().unwrap()], "1").status.code(), Some(2));

    let ok = write(
        &dir.path().join("ok.json"),
        r#"{"experiment": "hart", "algorithms": ["on-sgsp"], "seeds": [1]}"#,
    );
    assert_eq!(sgsp(&["run", &ok], "zero").status.code(), Some(2));
}

#[test]
fn verify_reports_certificate_and_nash_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let game = write(&dir.path().join("hart.json"), &build_hart_game(0.8).unwrap().to_json().unwrap());
    let pure = write(&dir.path().join("pure.json"), "[[[0, 0, 1]], [[0, 0, 1]]]");
    let out = sgsp(&["verify", &game, &pure], "1");
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("certified") && l.ends_with("true")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("is_nash") && l.ends_with("true")), "{text}");

    let bad = write(&dir.path().join("bad.json"), r#"{"probs": [[[1, 0, 0]], [[1, 0, 0]]]}"#);
    let out = sgsp(&["verify", &game, &bad, "--tol", "0.1"], "1");
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("is_nash") && l.ends_with("false")), "{text}");

    let wrong_shape = write(&dir.path().join("shape.json"), "[[[0.5, 0.5]], [[1, 0, 0]]]");
    assert_ne!(sgsp(&["verify", &game, &wrong_shape], "1").status.code(), Some(0));
}

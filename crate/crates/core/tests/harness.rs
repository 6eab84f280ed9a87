use std::fs;

use sgsp_core::harness::{
    run_experiment, summarize_dir, Algorithm, Experiment, ExperimentConfig, ABORTED_LABEL, SUMMARY_CSV,
    SUMMARY_TEXT,
};
use sgsp_core::trace::{RunStatus, RunTrace, SidecarDocument};
use sgsp_core::{SgspError, StochasticGame};

fn hart_config(dir: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        Experiment::Hart,
        vec![Algorithm::OnSgsp, Algorithm::OffSgsp, Algorithm::Nashq, Algorithm::Friendq],
        vec![1, 2, 3],
    );
    c.sgsp.max_iters = 2000;
    c.output_dir = dir.to_path_buf();
    c
}

#[test]
fn run_writes_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = hart_config(dir.path());
    let report = run_experiment(&config, 2).unwrap();
    assert_eq!(report.exit_code(), 0);
    assert_eq!(report.cells.len(), 12);
    for algorithm in ["on-sgsp", "off-sgsp", "nashq", "friendq"] {
        for seed in 1..=3 {
            let stem = format!("hart_{algorithm}_seed{seed}");
            let csv = fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap();
            let rows = RunTrace::parse_csv(&csv).unwrap();
            assert!(!rows.is_empty());
            let doc = SidecarDocument::read(&dir.path().join(format!("{stem}.json"))).unwrap();
            assert_eq!(doc.trace.meta.seed, seed);
            assert_eq!(doc.trace.meta.algorithm, algorithm);
            assert_eq!(doc.trace.meta.config_hash, config.hash().unwrap());
            assert_eq!(doc.config["seed"], seed);
            assert!(doc.trace.outcome.is_some());
        }
    }
    let table = &report.summary;
    assert_eq!(table.groups.len(), 4);
    for g in &table.groups {
        assert_eq!(g.runs, 3);
        assert!((g.outcomes.values().sum::<f64>() - 100.0).abs() < 1e-9);
    }
    let csv = fs::read_to_string(dir.path().join(SUMMARY_CSV)).unwrap();
    assert!(csv.contains("hart,off-sgsp,3,outcome_pct,\"mixed (0.5,0.5,0)\""));
    assert!(fs::read_to_string(dir.path().join(SUMMARY_TEXT)).unwrap().contains("hart / on-sgsp (3 runs)"));
    // summarizing the same directory again is stable
    assert_eq!(&summarize_dir(dir.path()).unwrap(), table);
}

#[test]
fn trace_steps_increase_within_each_metric() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = hart_config(dir.path());
    config.seeds = vec![9];
    run_experiment(&config, 1).unwrap();
    for entry in fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") && !path.ends_with(SUMMARY_CSV) {
            let rows = RunTrace::parse_csv(&fs::read_to_string(&path).unwrap()).unwrap();
            let mut last = std::collections::HashMap::new();
            for r in rows {
                if let Some(prev) = last.insert(r.metric.clone(), r.step) {
                    assert!(r.step > prev, "{}: {} repeats step {}", path.display(), r.metric, r.step);
                }
            }
        }
    }
}

#[test]
fn config_file_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    fs::write(
        &path,
        r#"{"experiment": "stg", "grid_size": 3, "algorithms": ["on-sgsp"], "seeds": [4],
            "timescales": "literal", "sgsp": {"max_iters": 500}, "output_dir": "out"}"#,
    )
    .unwrap();
    let config = ExperimentConfig::from_path(&path).unwrap();
    assert_eq!(config.output_dir, dir.path().join("out"));
    assert_eq!(config.sgsp.max_iters, 500);

    fs::write(&path, r#"{"experiment": "hart", "algorithms": ["on-sgsp"], "seeds": []}"#).unwrap();
    assert!(matches!(ExperimentConfig::from_path(&path), Err(SgspError::Config(_))));
    fs::write(&path, r#"{"experiment": "hart", "algorithms": ["on-sgsp"], "seeds": [1], "bogus": 1}"#).unwrap();
    assert!(matches!(ExperimentConfig::from_path(&path), Err(SgspError::Config(_))));
    fs::write(&path, r#"{"experiment": "custom", "game_file": "nope.json", "algorithms": ["nashq"], "seeds": [1]}"#)
        .unwrap();
    assert!(matches!(ExperimentConfig::from_path(&path), Err(SgspError::Config(_))));
}

#[test]
fn diverging_run_aborts_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let game = StochasticGame::new(
        2,
        0.99,
        vec![vec![2, 2]],
        vec![vec![vec![(0, 1.0)]; 4]],
        vec![vec![vec![1e307, 1e307]; 4]],
    )
    .unwrap();
    let game_path = dir.path().join("huge.json");
    fs::write(&game_path, game.to_json().unwrap()).unwrap();
    let mut config = ExperimentConfig::new(Experiment::Custom, vec![Algorithm::OnSgsp, Algorithm::OffSgsp], vec![1]);
    config.game_file = Some(game_path);
    config.output_dir = dir.path().join("runs");
    config.sgsp.max_iters = 10_000;
    let report = run_experiment(&config, 1).unwrap();
    assert_eq!(report.exit_code(), 1);
    for cell in &report.cells {
        assert!(matches!(cell.status, Some(RunStatus::Aborted { .. })), "{:?}", cell.status);
        assert_eq!(cell.outcome.as_deref(), Some(ABORTED_LABEL));
        let csv = dir.path().join("runs").join(format!("custom_{}_seed1.csv", cell.algorithm.id()));
        assert!(!RunTrace::parse_csv(&fs::read_to_string(csv).unwrap()).unwrap().is_empty());
    }
}

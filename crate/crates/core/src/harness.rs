//! Experiment orchestration: JSON configs, (seed × algorithm) cells on a
//! bounded worker pool, per-cell trace artifacts, outcome labels and summary
//! tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{friendq_run, nashq_run};
use crate::environments::{build_hart_game, hart_reference_equilibria, DeltaStg, Environment, Stg};
use crate::error::{Result, SgspError};
use crate::game::{PolicyProfile, StochasticGame, ValueProfile};
use crate::off_sgsp::run_off_sgsp;
use crate::on_sgsp::run_on_sgsp;
use crate::oracle::is_nash;
use crate::rng::{seeded, RNG_ALGORITHM};
use crate::schedule::{SgspConfig, Timescales};
use crate::trace::{RunStatus, RunTrace, SidecarDocument, SidecarSummary, TraceMeta};

/// Environment variable bounding the number of concurrently running cells.
pub const WORKERS_ENV: &str = "SGSP_WORKERS";

pub const DEFAULT_CLASSIFY_TOL: f64 = 0.1;

/// Largest policy change over the last 10% of a run still counted as stationary.
pub const STATIONARITY_THRESHOLD: f64 = 0.05;

pub const NON_NASH_LABEL: &str = "non-Nash/oscillating";
pub const NASH_LABEL: &str = "Nash";
pub const ABORTED_LABEL: &str = "aborted";
pub const UNCLASSIFIED_LABEL: &str = "unclassified";

pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TEXT: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Hart,
    Stg,
    StgDelta,
    /// Game read from `game_file`.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    OffSgsp,
    OnSgsp,
    Nashq,
    Friendq,
}

impl Algorithm {
    pub fn id(self) -> &'static str {
        match self {
            Self::OffSgsp => "off-sgsp",
            Self::OnSgsp => "on-sgsp",
            Self::Nashq => "nashq",
            Self::Friendq => "friendq",
        }
    }
}

fn default_grid_size() -> usize {
    3
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_classify_tol() -> f64 {
    DEFAULT_CLASSIFY_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Required for `custom`; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game_file: Option<PathBuf>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    /// Grid side `M` for the STG experiments.
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Discount factor; built-in games default to 0.8, custom games keep
    /// their own unless this is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    /// Replaces `sgsp.policy_step` and `sgsp.value_step` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timescales: Option<Timescales>,
    #[serde(default)]
    pub sgsp: SgspConfig,
    #[serde(default = "default_classify_tol")]
    pub classify_tol: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Config with default solver settings for the given cells.
    pub fn new(experiment: Experiment, algorithms: Vec<Algorithm>, seeds: Vec<u64>) -> Self {
        Self {
            experiment,
            game_file: None,
            algorithms,
            seeds,
            grid_size: default_grid_size(),
            discount: None,
            timescales: None,
            sgsp: SgspConfig::default(),
            classify_tol: DEFAULT_CLASSIFY_TOL,
            output_dir: default_output_dir(),
        }
    }

    /// Parses, resolves relative paths against the file's directory and validates.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| SgspError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: Self = serde_json::from_str(&text)
            .map_err(|e| SgspError::Config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(game) = &config.game_file {
            if game.is_relative() {
                config.game_file = Some(base.join(game));
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    /// Solver settings with `timescales` applied.
    pub fn solver_config(&self) -> SgspConfig {
        let mut cfg = self.sgsp.clone();
        if let Some(t) = self.timescales {
            (cfg.policy_step, cfg.value_step) = t.schedules();
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SgspError::Config(msg));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seed list contains duplicates".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithm list is empty".into());
        }
        if self.algorithms.iter().collect::<BTreeSet<_>>().len() != self.algorithms.len() {
            return bad("algorithm list contains duplicates".into());
        }
        if !(self.classify_tol >= 0.0) {
            return bad(format!("classification tolerance must be nonnegative, got {}", self.classify_tol));
        }
        if let Some(d) = self.discount {
            if !(d > 0.0 && d < 1.0) {
                return bad(format!("discount must lie in (0, 1), got {d}"));
            }
        }
        self.solver_config().validate()?;
        match self.experiment {
            Experiment::Custom => match &self.game_file {
                None => return bad("custom experiments need a game_file".into()),
                Some(p) if !p.is_file() => return bad(format!("game file {} does not exist", p.display())),
                Some(_) => {}
            },
            _ if self.game_file.is_some() => return bad("game_file is only used by custom experiments".into()),
            _ => {}
        }
        if matches!(self.experiment, Experiment::Stg | Experiment::StgDelta) && self.grid_size < 2 {
            return bad(format!("grid size must be at least 2, got {}", self.grid_size));
        }
        if self.algorithms.contains(&Algorithm::OffSgsp) {
            match self.experiment {
                Experiment::StgDelta => return bad("off-sgsp needs a tabulated model; stg-delta has none".into()),
                Experiment::Stg if self.grid_size > crate::environments::MAX_TABLE_SIDE => {
                    return bad(format!(
                        "off-sgsp tabulates the full game only up to grid size {}",
                        crate::environments::MAX_TABLE_SIDE
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Short identifier used in file names and trace metadata.
    pub fn experiment_id(&self) -> String {
        match self.experiment {
            Experiment::Hart => "hart".into(),
            Experiment::Stg => format!("stg-m{}", self.grid_size),
            Experiment::StgDelta => format!("stg-delta-m{}", self.grid_size),
            Experiment::Custom => "custom".into(),
        }
    }

    fn build(&self) -> Result<Built> {
        let discount = self.discount.unwrap_or(0.8);
        Ok(match self.experiment {
            Experiment::Hart => Built::Game(build_hart_game(discount)?),
            Experiment::Stg => Built::Stg(Stg::new(self.grid_size, discount)?),
            Experiment::StgDelta => Built::Delta(DeltaStg::new(Stg::new(self.grid_size, discount)?)),
            Experiment::Custom => {
                let path = self.game_file.as_ref().expect("validated config");
                let game = StochasticGame::from_json(&fs::read_to_string(path)?)?;
                let game = match self.discount {
                    Some(d) => game.with_discount(d)?,
                    None => game,
                };
                if self.algorithms.contains(&Algorithm::Nashq) && game.n_agents() != 2 {
                    return Err(SgspError::Config(format!(
                        "nashq needs a two-agent game, {} has {}",
                        path.display(),
                        game.n_agents()
                    )));
                }
                Built::Game(game)
            }
        })
    }
}

enum Built {
    Game(StochasticGame),
    Stg(Stg),
    Delta(DeltaStg),
}

impl Built {
    /// Tabulated model, when one exists at this size.
    fn game(&self) -> Option<StochasticGame> {
        match self {
            Self::Game(g) => Some(g.clone()),
            Self::Stg(s) => s.to_game().ok(),
            Self::Delta(_) => None,
        }
    }
}

/// Labels `policy` with the first reference equilibrium every player of which
/// is within L1 distance `tol`, or [`NON_NASH_LABEL`] when none is or when
/// `tail_drift` exceeds [`STATIONARITY_THRESHOLD`].
pub fn classify_outcome(
    policy: &PolicyProfile,
    references: &[(String, PolicyProfile)],
    tol: f64,
    tail_drift: Option<f64>,
) -> Result<String> {
    if references.is_empty() {
        return Err(SgspError::Config("classification needs at least one reference equilibrium".into()));
    }
    if tail_drift.is_some_and(|d| d > STATIONARITY_THRESHOLD) {
        return Ok(NON_NASH_LABEL.into());
    }
    for (label, reference) in references {
        if reference.n_agents() != policy.n_agents() || reference.n_states() != policy.n_states() {
            return Err(SgspError::Structure(format!("reference {label} does not match the policy shape")));
        }
        let close = (0..policy.n_agents()).all(|i| {
            let l1: f64 = (0..policy.n_states())
                .map(|x| {
                    policy
                        .row(i, x)
                        .iter()
                        .zip(reference.row(i, x))
                        .map(|(p, q)| (p - q).abs())
                        .sum::<f64>()
                })
                .sum();
            l1 <= tol
        });
        if close {
            return Ok(label.clone());
        }
    }
    Ok(NON_NASH_LABEL.into())
}

/// Hart reference equilibria as policy profiles.
pub fn hart_references() -> Vec<(String, PolicyProfile)> {
    hart_reference_equilibria()
        .into_iter()
        .map(|(label, rows)| (label, PolicyProfile::from_rows(rows.into_iter().map(|r| vec![r]).collect())))
        .collect()
}

/// Runs one (algorithm, seed) cell in memory and labels its outcome.
///
/// The summary gains `nash_gain` (largest unilateral deviation gain of the
/// final policy) whenever the game is tabulated.
pub fn run_cell(config: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> Result<RunTrace> {
    config.validate()?;
    let built = config.build()?;
    run_built(config, &built, algorithm, seed, config.hash()?)
}

fn run_built(
    config: &ExperimentConfig,
    built: &Built,
    algorithm: Algorithm,
    seed: u64,
    config_hash: String,
) -> Result<RunTrace> {
    let meta = TraceMeta {
        experiment: config.experiment_id(),
        algorithm: algorithm.id().into(),
        seed,
        rng: RNG_ALGORITHM.into(),
        config_hash,
        started_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
    };
    let cfg = config.solver_config();
    let game = built.game();
    let mut trace = match (algorithm, built) {
        (Algorithm::OffSgsp, _) => {
            let game = game.as_ref().ok_or_else(|| SgspError::Unsupported("off-sgsp needs a tabulated game".into()))?;
            let start = PolicyProfile::uniform(game);
            let values = ValueProfile::zeros(game.n_agents(), game.n_states());
            run_off_sgsp(game, values, start, &cfg, meta)?.trace
        }
        (_, Built::Game(g)) => model_free(g, algorithm, &cfg, seed, meta)?,
        (_, Built::Stg(s)) => model_free(s, algorithm, &cfg, seed, meta)?,
        (_, Built::Delta(d)) => model_free(d, algorithm, &cfg, seed, meta)?,
    };
    label(config, game.as_ref(), &mut trace)?;
    Ok(trace)
}

fn model_free<E: Environment>(
    env: &E,
    algorithm: Algorithm,
    cfg: &SgspConfig,
    seed: u64,
    meta: TraceMeta,
) -> Result<RunTrace> {
    let rng = seeded(seed);
    Ok(match algorithm {
        Algorithm::OnSgsp => run_on_sgsp(env, cfg, rng, meta)?.trace,
        Algorithm::Nashq => nashq_run(env, cfg, rng, meta)?.trace,
        Algorithm::Friendq => friendq_run(env, cfg, rng, meta)?.trace,
        Algorithm::OffSgsp => unreachable!("dispatched by the caller"),
    })
}

fn label(config: &ExperimentConfig, game: Option<&StochasticGame>, trace: &mut RunTrace) -> Result<()> {
    if trace.is_aborted() {
        trace.outcome = Some(ABORTED_LABEL.into());
        return Ok(());
    }
    let Some(policy) = trace.final_policy.clone() else {
        return Ok(());
    };
    let drift = trace.summary.get("policy_drift_last_10pct").copied();
    if let Some(game) = game {
        let verdict = is_nash(game, &policy, config.classify_tol)?;
        trace.summary.insert("nash_gain".into(), verdict.max_gain);
        trace.outcome = Some(if config.experiment == Experiment::Hart {
            classify_outcome(&policy, &hart_references(), config.classify_tol, drift)?
        } else if verdict.is_nash && !drift.is_some_and(|d| d > STATIONARITY_THRESHOLD) {
            NASH_LABEL.into()
        } else {
            NON_NASH_LABEL.into()
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `None` when the cell failed before producing a trace.
    pub status: Option<RunStatus>,
    pub outcome: Option<String>,
    pub error: Option<String>,
}

impl CellReport {
    pub fn completed(&self) -> bool {
        self.error.is_none() && !matches!(self.status, None | Some(RunStatus::Aborted { .. }))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub cells: Vec<CellReport>,
    pub summary: SummaryTable,
}

impl ExperimentReport {
    /// 0 when every cell completed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.cells.iter().all(CellReport::completed) {
            0
        } else {
            1
        }
    }
}

/// Worker count from [`WORKERS_ENV`], defaulting to the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(SgspError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

pub fn cell_stem(config: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> String {
    format!("{}_{}_seed{seed}", config.experiment_id(), algorithm.id())
}

/// Runs every cell on a pool of `workers` threads, writes `<stem>.csv` and
/// `<stem>.json` per cell and the summary files once all cells have joined.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<ExperimentReport> {
    config.validate()?;
    let built = config.build()?;
    let hash = config.hash()?;
    let config_json = serde_json::to_value(config)?;
    fs::create_dir_all(&config.output_dir)?;
    let cells: Vec<(Algorithm, u64)> = config
        .algorithms
        .iter()
        .flat_map(|&a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SgspError::Config(format!("cannot build worker pool: {e}")))?;
    let reports: Vec<CellReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(algorithm, seed)| {
                let stem = cell_stem(config, algorithm, seed);
                info!("cell {stem} started");
                let result = run_built(config, &built, algorithm, seed, hash.clone()).and_then(|trace| {
                    trace.write_csv(&config.output_dir.join(format!("{stem}.csv")))?;
                    let mut cell_config = config_json.clone();
                    cell_config["algorithm"] = algorithm.id().into();
                    cell_config["seed"] = seed.into();
                    trace.write_sidecar(&config.output_dir.join(format!("{stem}.json")), &cell_config)?;
                    Ok(trace)
                });
                match result {
                    Ok(trace) => {
                        info!("cell {stem} finished: {:?} in {:.0} ms", trace.status, trace.wall_clock_ms);
                        CellReport {
                            algorithm,
                            seed,
                            status: Some(trace.status),
                            outcome: trace.outcome,
                            error: None,
                        }
                    }
                    Err(e) => {
                        warn!("cell {stem} failed: {e}");
                        CellReport {
                            algorithm,
                            seed,
                            status: None,
                            outcome: None,
                            error: Some(e.to_string()),
                        }
                    }
                }
            })
            .collect()
    });
    let summary = summarize_dir(&config.output_dir)?;
    Ok(ExperimentReport { cells: reports, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryGroup {
    pub experiment: String,
    pub algorithm: String,
    pub runs: usize,
    /// Percentage of runs per outcome label; sums to 100.
    pub outcomes: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, MeanStd>,
    pub wall_clock_ms_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub groups: Vec<SummaryGroup>,
}

/// Groups runs by (experiment, algorithm).
pub fn summarize(traces: &[SidecarSummary]) -> Result<SummaryTable> {
    if traces.is_empty() {
        return Err(SgspError::Config("nothing to summarize".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<&SidecarSummary>> = BTreeMap::new();
    for t in traces {
        groups
            .entry((t.meta.experiment.clone(), t.meta.algorithm.clone()))
            .or_default()
            .push(t);
    }
    let groups = groups
        .into_iter()
        .map(|((experiment, algorithm), runs)| {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for run in &runs {
                let label = run.outcome.clone().unwrap_or_else(|| UNCLASSIFIED_LABEL.into());
                *counts.entry(label).or_default() += 1;
                for (k, &v) in &run.summary {
                    samples.entry(k.clone()).or_default().push(v);
                }
            }
            let n = runs.len();
            SummaryGroup {
                experiment,
                algorithm,
                runs: n,
                outcomes: counts
                    .into_iter()
                    .map(|(k, c)| (k, 100.0 * c as f64 / n as f64))
                    .collect(),
                metrics: samples.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect(),
                wall_clock_ms_total: runs.iter().map(|r| r.wall_clock_ms).sum(),
            }
        })
        .collect();
    Ok(SummaryTable { groups })
}

/// Reads every sidecar in `dir` (sorted by name), summarizes them and writes
/// the CSV and text tables next to them.
pub fn summarize_dir(dir: &Path) -> Result<SummaryTable> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut traces = Vec::new();
    for path in paths {
        match SidecarDocument::read(&path) {
            Ok(doc) => traces.push(doc.trace),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    let table = summarize(&traces)?;
    fs::write(dir.join(SUMMARY_CSV), table.to_csv()?)?;
    fs::write(dir.join(SUMMARY_TEXT), table.to_text())?;
    Ok(table)
}

impl SummaryTable {
    /// Long format: `experiment,algorithm,runs,kind,name,mean,std`, where
    /// `kind` is `outcome_pct`, `metric` or `wall_clock_ms_total`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| SgspError::Io(e.into());
        w.write_record(["experiment", "algorithm", "runs", "kind", "name", "mean", "std"])
            .map_err(io)?;
        for g in &self.groups {
            let runs = g.runs.to_string();
            let mut row = |kind: &str, name: &str, mean: f64, std: f64| {
                w.write_record([
                    g.experiment.as_str(),
                    g.algorithm.as_str(),
                    runs.as_str(),
                    kind,
                    name,
                    &format!("{mean:.16e}"),
                    &format!("{std:.16e}"),
                ])
            };
            for (label, pct) in &g.outcomes {
                row("outcome_pct", label, *pct, 0.0).map_err(io)?;
            }
            for (name, m) in &g.metrics {
                row("metric", name, m.mean, m.std).map_err(io)?;
            }
            row("wall_clock_ms_total", "", g.wall_clock_ms_total, 0.0).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| SgspError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let _ = writeln!(out, "{} / {} ({} runs)", g.experiment, g.algorithm, g.runs);
            for (label, pct) in &g.outcomes {
                let _ = writeln!(out, "  {pct:6.1}%  {label}");
            }
            for (name, m) in &g.metrics {
                let _ = writeln!(out, "  {name:<28} {:>14.6} ± {:<12.6}", m.mean, m.std);
            }
            let _ = writeln!(out, "  wall clock total {:.1} s", g.wall_clock_ms_total / 1e3);
        }
        out
    }
}

//! Shared self-play loop for the model-free learners.
//!
//! A [`JointLearner`] owns every agent's private state. The driver samples the
//! environment and broadcasts the same [`Transition`] to all agents, then
//! records the metrics common to every algorithm.

use std::time::Instant;

use crate::environments::Environment;
use crate::error::Result;
use crate::game::PolicyProfile;
use crate::rng::SimRng;
use crate::trace::{RunStatus, RunTrace, TraceMeta, WALL_CLOCK_METRIC};

/// Observation broadcast to every agent after each step.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub state: usize,
    pub actions: &'a [usize],
    pub rewards: &'a [f64],
    pub next: usize,
}

pub trait JointLearner {
    /// Chooses every agent's action at observation `state`; `step` counts
    /// from 0.
    fn act(&mut self, state: usize, step: u64, rng: &mut SimRng, actions: &mut [usize]);
    /// Processes the broadcast transition of step `step`.
    fn observe(&mut self, tr: &Transition<'_>, step: u64) -> Result<()>;
    /// Current strategy of `agent` at observation `state`.
    fn policy_row(&mut self, agent: usize, state: usize) -> Vec<f64>;

    fn policy_profile(&mut self, n_agents: usize, n_states: usize) -> PolicyProfile {
        PolicyProfile::from_rows(
            (0..n_agents)
                .map(|i| (0..n_states).map(|x| self.policy_row(i, x)).collect())
                .collect(),
        )
    }
}

pub struct SelfPlayDriver<'e, E: Environment + ?Sized, L> {
    env: &'e E,
    learner: L,
    state: usize,
    rng: SimRng,
    step: u64,
    snapshot_every: u64,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

impl<'e, E: Environment + ?Sized, L: JointLearner> SelfPlayDriver<'e, E, L> {
    /// Draws the initial state from `rng` and starts at step 0.
    pub fn new(env: &'e E, learner: L, mut rng: SimRng, snapshot_every: u64) -> Self {
        let state = env.initial_state(&mut rng);
        Self {
            env,
            learner,
            state,
            rng,
            step: 0,
            snapshot_every: snapshot_every.max(1),
            actions: vec![0; env.n_agents()],
            rewards: vec![0.0; env.n_agents()],
        }
    }

    pub fn env(&self) -> &'e E {
        self.env
    }

    pub fn learner(&self) -> &L {
        &self.learner
    }

    pub fn learner_mut(&mut self) -> &mut L {
        &mut self.learner
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn policy_profile(&mut self) -> PolicyProfile {
        self.learner
            .policy_profile(self.env.n_agents(), self.env.n_observations())
    }

    /// One act, sample, observe cycle. Returns the true state that was left.
    pub fn advance(&mut self) -> Result<usize> {
        let obs = self.env.observe(self.state);
        self.learner
            .act(obs, self.step, &mut self.rng, &mut self.actions);
        let next = self
            .env
            .step(self.state, &self.actions, &mut self.rng, &mut self.rewards)?;
        let tr = Transition {
            state: obs,
            actions: &self.actions,
            rewards: &self.rewards,
            next: self.env.observe(next),
        };
        self.learner.observe(&tr, self.step)?;
        let left = self.state;
        self.state = next;
        self.step += 1;
        Ok(left)
    }
}

/// Largest observation count for which per-entry policy snapshots are traced.
const POLICY_SNAPSHOT_LIMIT: usize = 16;

#[derive(Debug, Clone)]
pub struct SelfPlayOutcome {
    pub policy: PolicyProfile,
    pub trace: RunTrace,
}

/// Runs `max_steps` further steps and records metrics every snapshot.
///
/// Metrics: mean inter-agent distance over the snapshot window (when the
/// environment defines one), the largest policy change since the previous
/// snapshot, and for small games every policy entry as `pi.i.x.a`. The
/// summary holds the largest policy deviation during the last 10% of the run
/// from the policy at its start, and the first/last 10% mean distances.
pub fn run_selfplay<E: Environment + ?Sized, L: JointLearner>(
    driver: &mut SelfPlayDriver<'_, E, L>,
    max_steps: u64,
    meta: TraceMeta,
) -> Result<SelfPlayOutcome> {
    let started = Instant::now();
    let env = driver.env;
    let n_agents = env.n_agents();
    let small = env.n_observations() <= POLICY_SNAPSHOT_LIMIT;
    let every = driver.snapshot_every;
    let mut trace = RunTrace::new(meta);
    let head_end = max_steps / 10;
    let tail_start = max_steps - max_steps / 10;
    let mut tail_reference: Option<PolicyProfile> = None;
    let mut tail_drift = 0.0f64;
    let mut last_snapshot = driver.policy_profile();
    let (mut window_sum, mut window_len) = (0.0, 0u64);
    let (mut head_sum, mut tail_sum) = (0.0, 0.0);
    let has_distance = env.distance(driver.state).is_some();

    record(&mut trace, 0, &last_snapshot, small, None, 0.0, &started);
    for k in 1..=max_steps {
        if k == tail_start + 1 {
            tail_reference = Some(driver.policy_profile());
        }
        let left = match driver.advance() {
            Ok(s) => s,
            Err(e) => {
                trace.status = RunStatus::Aborted {
                    step: driver.step,
                    detail: e.to_string(),
                };
                break;
            }
        };
        if let Some(d) = env.distance(left) {
            window_sum += d;
            window_len += 1;
            if k <= head_end {
                head_sum += d;
            }
            if k > tail_start {
                tail_sum += d;
            }
        }
        if let Some(reference) = &tail_reference {
            // only the row of the state just left can have changed
            let x = env.observe(left);
            for i in 0..n_agents {
                let row = driver.learner.policy_row(i, x);
                for (p, q) in row.iter().zip(reference.row(i, x)) {
                    tail_drift = tail_drift.max((p - q).abs());
                }
            }
        }
        if k % every == 0 || k == max_steps {
            let current = driver.policy_profile();
            let change = current.max_abs_diff(&last_snapshot);
            let mean = (window_len > 0).then(|| window_sum / window_len as f64);
            record(&mut trace, k, &current, small, mean, change, &started);
            last_snapshot = current;
            window_sum = 0.0;
            window_len = 0;
        }
    }
    trace.wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
    trace
        .summary
        .insert("steps".into(), driver.step as f64);
    trace
        .summary
        .insert("policy_drift_last_10pct".into(), tail_drift);
    if has_distance && head_end > 0 {
        trace
            .summary
            .insert("distance_first_10pct".into(), head_sum / head_end as f64);
        trace.summary.insert(
            "distance_last_10pct".into(),
            tail_sum / (max_steps - tail_start) as f64,
        );
    }
    let policy = driver.policy_profile();
    trace.final_policy = Some(policy.clone());
    Ok(SelfPlayOutcome { policy, trace })
}

fn record(
    trace: &mut RunTrace,
    step: u64,
    policy: &PolicyProfile,
    small: bool,
    distance: Option<f64>,
    change: f64,
    started: &Instant,
) {
    if let Some(d) = distance {
        trace.push(step, "distance", d);
    }
    trace.push(step, "policy_change", change);
    if small {
        for (i, rows) in policy.rows().iter().enumerate() {
            for (x, row) in rows.iter().enumerate() {
                for (a, &p) in row.iter().enumerate() {
                    trace.push(step, &format!("pi.{i}.{x}.{a}"), p);
                }
            }
        }
    }
    trace.push(step, WALL_CLOCK_METRIC, started.elapsed().as_secs_f64() * 1e3);
}

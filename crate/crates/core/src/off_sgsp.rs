//! Model-based two-timescale solver: a synchronous critic sweep on the fast
//! timescale and projected policy descent on the slow one, with periodic
//! δ-offset perturbation of the policy.

use std::time::Instant;

use crate::equilibrium::{direction, project_simplex_in_place, report_from, BellmanTable, SgspReport};
use crate::error::{Result, SgspError};
use crate::game::{PolicyProfile, StochasticGame, ValueProfile};
pub use crate::schedule::{SgspConfig, StepSchedule, Timescales};
use crate::trace::{RunStatus, RunTrace, TraceMeta, WALL_CLOCK_METRIC};

/// `v^i(x) += c Σ_a π^i(x,a) g^i_{x,a}` for every `(i, x)`, from the pre-step values.
pub fn critic_step(
    game: &StochasticGame,
    values: &ValueProfile,
    policy: &PolicyProfile,
    step: f64,
) -> Result<ValueProfile> {
    let table = BellmanTable::compute(game, values, policy)?;
    Ok(critic_from(&table, values, policy, step))
}

fn critic_from(table: &BellmanTable, values: &ValueProfile, policy: &PolicyProfile, step: f64) -> ValueProfile {
    let rows = values
        .rows()
        .iter()
        .enumerate()
        .map(|(i, vi)| {
            vi.iter()
                .enumerate()
                .map(|(x, &v)| {
                    let drift: f64 = policy
                        .row(i, x)
                        .iter()
                        .zip(&table.own[i][x])
                        .map(|(p, g)| p * g)
                        .sum();
                    v + step * drift
                })
                .collect()
        })
        .collect();
    ValueProfile::from_rows(rows)
}

/// One projected descent step on every policy coordinate.
pub fn actor_step(
    game: &StochasticGame,
    values: &ValueProfile,
    policy: &PolicyProfile,
    step: f64,
    config: &SgspConfig,
) -> Result<PolicyProfile> {
    config.validate()?;
    let table = BellmanTable::compute(game, values, policy)?;
    Ok(actor_from(&table, policy, step, config))
}

fn actor_from(table: &BellmanTable, policy: &PolicyProfile, step: f64, config: &SgspConfig) -> PolicyProfile {
    let sign = config.bsgn().expect("validated config");
    let rows = policy
        .rows()
        .iter()
        .enumerate()
        .map(|(i, agent_rows)| {
            agent_rows
                .iter()
                .enumerate()
                .map(|(x, row)| {
                    let mut raw: Vec<f64> = row
                        .iter()
                        .enumerate()
                        .map(|(a, &p)| {
                            p + step * direction(p, table.own[i][x][a], table.grad(i, x, a), config.alpha_prime, sign)
                        })
                        .collect();
                    project_simplex_in_place(&mut raw);
                    raw
                })
                .collect()
        })
        .collect();
    PolicyProfile::from_rows(rows)
}

/// δ-offset policy `(π + δ) / Σ(π + δ)` row by row.
pub fn perturb(policy: &PolicyProfile, delta: f64) -> Result<PolicyProfile> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(SgspError::Config(format!("perturbation offset must be non-negative, got {delta}")));
    }
    let rows = policy
        .rows()
        .iter()
        .map(|agent_rows| agent_rows.iter().map(|row| perturb_row(row, delta)).collect())
        .collect();
    Ok(PolicyProfile::from_rows(rows))
}

pub(crate) fn perturb_row(row: &[f64], delta: f64) -> Vec<f64> {
    if delta == 0.0 {
        return row.to_vec();
    }
    let total: f64 = row.iter().map(|p| p + delta).sum();
    row.iter().map(|p| (p + delta) / total).collect()
}

#[derive(Debug, Clone)]
pub struct OffSgspOutcome {
    pub values: ValueProfile,
    pub policy: PolicyProfile,
    pub trace: RunTrace,
    /// Certificate at the final point with the configured tolerance.
    pub report: SgspReport,
    pub iterations: u64,
}

impl OffSgspOutcome {
    pub fn certified(&self) -> bool {
        self.report.certified
    }
}

/// Runs the solver from `(init_values, init_policy)`.
///
/// Every iteration computes the Bellman table once at `(v_n, π_n)` and applies
/// both recursions to it. The policy is perturbed after every `perturb_period`
/// iterations unless the run has already stopped. A non-finite value aborts
/// the run; the returned trace then ends at the offending iteration.
pub fn run_off_sgsp(
    game: &StochasticGame,
    init_values: ValueProfile,
    init_policy: PolicyProfile,
    config: &SgspConfig,
    meta: TraceMeta,
) -> Result<OffSgspOutcome> {
    config.validate()?;
    game.check_value_shape(&init_values)?;
    game.check_policy(&init_policy, 1e-9)?;
    let started = Instant::now();
    let mut trace = RunTrace::new(meta);
    let mut values = init_values;
    let mut policy = init_policy;
    let mut table = BellmanTable::compute(game, &values, &policy)?;
    let mut n = 0u64;
    loop {
        if n % config.snapshot_every == 0 || n == config.max_iters {
            let report = report_from(&table, &policy, config.convergence_tol);
            trace.push(n, "f", report.objective);
            trace.push(n, "max_sgsp_violation", report.max_sgsp_violation);
            trace.push(n, "max_constraint_violation", report.max_constraint_violation);
            trace.push(n, WALL_CLOCK_METRIC, started.elapsed().as_secs_f64() * 1e3);
            if report.certified {
                trace.status = RunStatus::Converged { step: n };
                break;
            }
        }
        if n >= config.max_iters {
            break;
        }
        n += 1;
        let next_values = critic_from(&table, &values, &policy, config.value_step.at(n));
        policy = actor_from(&table, &policy, config.policy_step.at(n), config);
        values = next_values;
        if !values.is_finite() {
            trace.status = RunStatus::Aborted {
                step: n,
                detail: format!("non-finite value estimate (max |v| = {})", values.max_abs()),
            };
            break;
        }
        if config.perturb_delta > 0.0 && n % config.perturb_period == 0 {
            policy = perturb(&policy, config.perturb_delta)?;
        }
        table = BellmanTable::compute(game, &values, &policy)?;
    }
    let report = report_from(&table, &policy, config.convergence_tol);
    trace.wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
    trace.summary.insert("final_f".into(), report.objective);
    trace.summary.insert("final_max_sgsp_violation".into(), report.max_sgsp_violation);
    trace.summary.insert("iterations".into(), n as f64);
    trace.final_policy = Some(policy.clone());
    trace.final_values = Some(values.clone());
    Ok(OffSgspOutcome {
        values,
        policy,
        trace,
        report,
        iterations: n,
    })
}

//! Independent verification routines.
//!
//! Nothing here calls into the evaluation paths of [`crate::game`] or
//! [`crate::equilibrium`]; expectations are recomputed by enumerating action
//! tuples directly so that cross-checks compare two separate implementations.

use serde::{Deserialize, Serialize};

use crate::error::{structure, Result, SgspError};
use crate::game::{PolicyProfile, StochasticGame, ValueProfile};

/// Every joint action tuple in `state`, in odometer order.
fn action_tuples(game: &StochasticGame, state: usize) -> Vec<Vec<usize>> {
    let counts: Vec<usize> = (0..game.n_agents()).map(|k| game.n_actions(state, k)).collect();
    let mut out = Vec::new();
    let mut tuple = vec![0usize; counts.len()];
    loop {
        out.push(tuple.clone());
        let mut k = counts.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            tuple[k] += 1;
            if tuple[k] < counts[k] {
                break;
            }
            tuple[k] = 0;
        }
    }
}

fn tuple_prob(policy: &PolicyProfile, state: usize, tuple: &[usize], skip: Option<usize>) -> f64 {
    tuple
        .iter()
        .enumerate()
        .filter(|&(k, _)| Some(k) != skip)
        .map(|(k, &a)| policy.prob(k, state, a))
        .product()
}

fn expected_next(game: &StochasticGame, state: usize, tuple: &[usize], v: &[f64]) -> f64 {
    let joint = game.joint_index(state, tuple).expect("tuple enumerated from game");
    game.transition(state, joint).iter().map(|&(y, p)| p * v[y]).sum()
}

fn tuple_reward(game: &StochasticGame, state: usize, tuple: &[usize], agent: usize) -> f64 {
    let joint = game.joint_index(state, tuple).expect("tuple enumerated from game");
    game.reward(state, joint)[agent]
}

/// Brute-force induced chain `(P_π, R_π)` by enumerating action tuples.
pub fn brute_force_chain(game: &StochasticGame, policy: &PolicyProfile) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = game.n_states();
    let mut p = vec![vec![0.0; n]; n];
    let mut r = vec![vec![0.0; n]; game.n_agents()];
    for x in 0..n {
        for tuple in action_tuples(game, x) {
            let w = tuple_prob(policy, x, &tuple, None);
            let joint = game.joint_index(x, &tuple).expect("enumerated");
            for &(y, q) in game.transition(x, joint) {
                p[x][y] += w * q;
            }
            for (agent, row) in r.iter_mut().enumerate() {
                row[x] += w * game.reward(x, joint)[agent];
            }
        }
    }
    (p, r)
}

/// Brute-force `Q^i_{π^{-i}}(x, a^i)` by enumerating opponent actions.
pub fn brute_force_q(
    game: &StochasticGame,
    values: &ValueProfile,
    policy: &PolicyProfile,
    agent: usize,
    state: usize,
    action: usize,
) -> f64 {
    action_tuples(game, state)
        .into_iter()
        .filter(|t| t[agent] == action)
        .map(|t| {
            let w = tuple_prob(policy, state, &t, Some(agent));
            w * (tuple_reward(game, state, &t, agent)
                + game.discount() * expected_next(game, state, &t, values.agent(agent)))
        })
        .sum()
}

/// Iterates `v ← R_π + β P_π v` until the sup-norm change is at most
/// `tol (1-β)/β`, which bounds the distance to the fixed point by `tol`.
pub fn value_iteration_fixed_policy(
    game: &StochasticGame,
    policy: &PolicyProfile,
    tol: f64,
    max_sweeps: usize,
) -> Result<ValueProfile> {
    if !(tol > 0.0) {
        return Err(SgspError::Config(format!("tolerance must be positive, got {tol}")));
    }
    game.check_policy_shape(policy)?;
    let (p, r) = brute_force_chain(game, policy);
    let beta = game.discount();
    let threshold = tol * (1.0 - beta) / beta;
    let n = game.n_states();
    let mut rows = Vec::with_capacity(game.n_agents());
    for rewards in &r {
        let mut v = vec![0.0; n];
        let mut converged = false;
        for _ in 0..max_sweeps {
            let next: Vec<f64> = (0..n)
                .map(|x| rewards[x] + beta * p[x].iter().zip(&v).map(|(q, w)| q * w).sum::<f64>())
                .collect();
            let change = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            v = next;
            if change <= threshold {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(SgspError::Numerical(format!(
                "value iteration did not reach tolerance {tol:e} within {max_sweeps} sweeps"
            )));
        }
        rows.push(v);
    }
    Ok(ValueProfile::from_rows(rows))
}

/// Optimal response of one agent against fixed opponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub values: Vec<f64>,
    /// Maximizing action per state (smallest index among ties).
    pub policy: Vec<usize>,
}

const BEST_RESPONSE_TOL: f64 = 1e-13;

/// Solves the MDP faced by `agent` when everyone else follows `policy`.
pub fn best_response(game: &StochasticGame, agent: usize, policy: &PolicyProfile) -> Result<BestResponse> {
    game.check_policy_shape(policy)?;
    if agent >= game.n_agents() {
        return structure(format!("agent {agent} out of range"));
    }
    let n = game.n_states();
    let beta = game.discount();
    // marginalized MDP: reward[x][a], kernel[x][a][y]
    let mut reward = Vec::with_capacity(n);
    let mut kernel = Vec::with_capacity(n);
    for x in 0..n {
        let m = game.n_actions(x, agent);
        let mut rx = vec![0.0; m];
        let mut kx = vec![vec![0.0; n]; m];
        for t in action_tuples(game, x) {
            let w = tuple_prob(policy, x, &t, Some(agent));
            let joint = game.joint_index(x, &t).expect("enumerated");
            rx[t[agent]] += w * game.reward(x, joint)[agent];
            for &(y, q) in game.transition(x, joint) {
                kx[t[agent]][y] += w * q;
            }
        }
        reward.push(rx);
        kernel.push(kx);
    }
    let q_of = |v: &[f64], x: usize, a: usize| -> f64 {
        reward[x][a] + beta * kernel[x][a].iter().zip(v).map(|(p, w)| p * w).sum::<f64>()
    };
    let threshold = BEST_RESPONSE_TOL * (1.0 - beta) / beta;
    let mut v = vec![0.0; n];
    let mut converged = false;
    for _ in 0..1_000_000 {
        let next: Vec<f64> = (0..n)
            .map(|x| (0..reward[x].len()).map(|a| q_of(&v, x, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let change = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if change <= threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SgspError::Numerical("best-response value iteration did not converge".into()));
    }
    let policy = (0..n)
        .map(|x| {
            let qs: Vec<f64> = (0..reward[x].len()).map(|a| q_of(&v, x, a)).collect();
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-10 * best.abs().max(1.0);
            qs.iter().position(|&q| q >= best - slack).unwrap_or(0)
        })
        .collect();
    Ok(BestResponse { values: v, policy })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NashVerdict {
    pub is_nash: bool,
    /// Largest gain any agent obtains in any state by deviating unilaterally.
    pub max_gain: f64,
}

/// Nash test by best-response comparison against the profile's own values.
pub fn is_nash(game: &StochasticGame, policy: &PolicyProfile, tol: f64) -> Result<NashVerdict> {
    if !(tol >= 0.0) {
        return Err(SgspError::Config(format!("tolerance must be nonnegative, got {tol}")));
    }
    let own = value_iteration_fixed_policy(game, policy, 1e-12, 10_000_000)?;
    let mut max_gain = f64::NEG_INFINITY;
    for agent in 0..game.n_agents() {
        let br = best_response(game, agent, policy)?;
        for (x, &best) in br.values.iter().enumerate() {
            max_gain = max_gain.max(best - own.get(agent, x));
        }
    }
    Ok(NashVerdict {
        is_nash: max_gain <= tol,
        max_gain,
    })
}

/// Objective `Σ_x Σ_a π(x,a) Σ_j [v^j(x) - r^j - β E v^j]` by tuple enumeration.
pub fn brute_force_objective(game: &StochasticGame, values: &ValueProfile, policy: &PolicyProfile) -> f64 {
    let mut f = 0.0;
    for x in 0..game.n_states() {
        for t in action_tuples(game, x) {
            let w = tuple_prob(policy, x, &t, None);
            for j in 0..game.n_agents() {
                let target = tuple_reward(game, x, &t, j)
                    + game.discount() * expected_next(game, x, &t, values.agent(j));
                f += w * (values.get(j, x) - target);
            }
        }
    }
    f
}

/// Central difference of the objective in one raw policy coordinate.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_grad(
    game: &StochasticGame,
    values: &ValueProfile,
    policy: &PolicyProfile,
    agent: usize,
    state: usize,
    action: usize,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(SgspError::Config(format!("step must be positive, got {h}")));
    }
    game.check_policy_shape(policy)?;
    let base = policy.prob(agent, state, action);
    let mut plus = policy.clone();
    plus.set(agent, state, action, base + h);
    let mut minus = policy.clone();
    minus.set(agent, state, action, base - h);
    Ok((brute_force_objective(game, values, &plus) - brute_force_objective(game, values, &minus)) / (2.0 * h))
}

/// Largest gain from a pure deviation in the bimatrix game `(a, b)` at the
/// mixed profile `(row, col)`.
pub fn bimatrix_deviation_gain(a: &[Vec<f64>], b: &[Vec<f64>], row: &[f64], col: &[f64]) -> f64 {
    let m = a.len();
    let k = a[0].len();
    let row_payoff = |i: usize| (0..k).map(|j| a[i][j] * col[j]).sum::<f64>();
    let col_payoff = |j: usize| (0..m).map(|i| b[i][j] * row[i]).sum::<f64>();
    let value_row: f64 = (0..m).map(|i| row[i] * row_payoff(i)).sum();
    let value_col: f64 = (0..k).map(|j| col[j] * col_payoff(j)).sum();
    let best_row = (0..m).map(row_payoff).fold(f64::NEG_INFINITY, f64::max);
    let best_col = (0..k).map(col_payoff).fold(f64::NEG_INFINITY, f64::max);
    (best_row - value_row).max(best_col - value_col)
}

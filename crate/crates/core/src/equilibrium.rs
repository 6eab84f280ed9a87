//! Objective, constraints, optimality certificate and descent machinery
//! shared by the model-based and model-free solvers.
//!
//! The objective is the expected summed one-step Bellman residual
//!
//! ```text
//! f(v, π) = Σ_x Σ_a π(x, a) Σ_j [ v^j(x) - r^j(x, a) - β Σ_y p(y|x,a) v^j(y) ]
//! ```
//!
//! with `π(x, a) = Π_k π^k(x, a^k)`. On valid policies this equals
//! `Σ_i Σ_x Σ_{a^i} π^i(x,a^i) (-g^i_{x,a^i})`, and its partial derivative in a
//! raw coordinate `π^i(x, a^i)` is exactly `-Σ_j g^j_{x,a^i}` whenever the other
//! agents' rows are distributions.

use serde::{Deserialize, Serialize};

use crate::error::{structure, Result, SgspError};
use crate::game::{PolicyProfile, StochasticGame, ValueProfile};

/// Default width of the linear region of [`Bsgn`].
pub const DEFAULT_BSGN_WIDTH: f64 = 1e-4;

/// Continuous sign surrogate: `±1` outside `[-ν, ν]`, linear `x/ν` inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bsgn {
    width: f64,
}

impl Bsgn {
    pub fn new(width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(SgspError::Config(format!("bsgn width must be positive, got {width}")));
        }
        Ok(Self { width })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        if x > self.width {
            1.0
        } else if x < -self.width {
            -1.0
        } else {
            x / self.width
        }
    }
}

impl Default for Bsgn {
    fn default() -> Self {
        Self {
            width: DEFAULT_BSGN_WIDTH,
        }
    }
}

pub fn bsgn(x: f64, width: f64) -> Result<f64> {
    Ok(Bsgn::new(width)?.apply(x))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return structure("cannot project an empty vector onto the simplex");
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(SgspError::Numerical(format!("non-finite input to projection: {weights:?}")));
    }
    let mut out = weights.to_vec();
    project_simplex_in_place(&mut out);
    Ok(out)
}

/// In-place variant of [`project_simplex`]; `row` must be nonempty and finite.
pub fn project_simplex_in_place(row: &mut [f64]) {
    let n = row.len();
    let sum: f64 = row.iter().sum();
    if row.iter().all(|&p| p >= 0.0) && (sum - 1.0).abs() <= 1e-15 {
        return;
    }
    let mut sorted = row.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for p in row.iter_mut() {
        *p = (*p - theta).max(0.0);
    }
    // renormalize away rounding so rows sum to one to machine precision
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        for p in row.iter_mut() {
            *p /= total;
        }
    } else {
        row.iter_mut().for_each(|p| *p = 1.0 / n as f64);
    }
}

/// Bellman errors of every coordinate for a fixed `(v, π)`.
///
/// `own[i][x][a]` is `g^i_{x,a}(v^i, π^{-i})`; `total[i][x][a]` is
/// `Σ_j g^j_{x,a}(v^j, π^{-i})`, the negated gradient of the objective.
#[derive(Debug, Clone)]
pub struct BellmanTable {
    pub own: Vec<Vec<Vec<f64>>>,
    pub total: Vec<Vec<Vec<f64>>>,
    /// Per-state contribution to the objective.
    pub objective_terms: Vec<f64>,
}

impl BellmanTable {
    pub fn compute(game: &StochasticGame, values: &ValueProfile, policy: &PolicyProfile) -> Result<Self> {
        game.check_policy_shape(policy)?;
        game.check_value_shape(values)?;
        let n = game.n_agents();
        let mut own: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(game.n_states()); n];
        let mut total: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(game.n_states()); n];
        let mut objective_terms = Vec::with_capacity(game.n_states());
        for x in 0..game.n_states() {
            let backups = game.state_backups(x, values);
            let weights = game.joint_weights(x, policy, None);
            let mut term = 0.0;
            for (w, b) in weights.iter().zip(&backups) {
                if *w != 0.0 {
                    let residual: f64 = (0..n).map(|j| values.get(j, x) - b[j]).sum();
                    term += w * residual;
                }
            }
            objective_terms.push(term);
            let v_sum: f64 = (0..n).map(|j| values.get(j, x)).sum();
            for i in 0..n {
                let m = game.n_actions(x, i);
                let marginal = game.joint_weights(x, policy, Some(i));
                // cond[a][j]: backup of agent j given agent i plays a
                let mut cond = vec![vec![0.0; n]; m];
                for (joint, (&w, b)) in marginal.iter().zip(&backups).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let a = game.action_of(x, joint, i);
                    for (c, bj) in cond[a].iter_mut().zip(b) {
                        *c += w * bj;
                    }
                }
                own[i].push(cond.iter().map(|c| c[i] - values.get(i, x)).collect());
                total[i].push(cond.iter().map(|c| c.iter().sum::<f64>() - v_sum).collect());
            }
        }
        Ok(Self {
            own,
            total,
            objective_terms,
        })
    }

    pub fn objective(&self) -> f64 {
        self.objective_terms.iter().sum()
    }

    pub fn grad(&self, agent: usize, state: usize, action: usize) -> f64 {
        -self.total[agent][state][action]
    }
}

/// Objective `f(v, π)`; zero exactly at feasible Nash points.
pub fn objective_f(game: &StochasticGame, values: &ValueProfile, policy: &PolicyProfile) -> Result<f64> {
    game.check_policy_shape(policy)?;
    game.check_value_shape(values)?;
    let n = game.n_agents();
    let mut f = 0.0;
    for x in 0..game.n_states() {
        let weights = game.joint_weights(x, policy, None);
        for (joint, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let residual: f64 = (0..n)
                .map(|j| values.get(j, x) - game.backup(x, joint, j, values))
                .sum();
            f += w * residual;
        }
    }
    Ok(f)
}

/// Largest violation of the policy constraints and of `g ≤ 0`.
pub fn feasibility(game: &StochasticGame, values: &ValueProfile, policy: &PolicyProfile) -> Result<f64> {
    let table = BellmanTable::compute(game, values, policy)?;
    Ok(feasibility_from(&table, policy))
}

fn feasibility_from(table: &BellmanTable, policy: &PolicyProfile) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (agent, rows) in policy.rows().iter().enumerate() {
        for (x, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            worst = worst.max((sum - 1.0).abs());
            for (a, &p) in row.iter().enumerate() {
                worst = worst.max(-p).max(table.own[agent][x][a]);
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgspEntry {
    pub agent: usize,
    pub state: usize,
    pub action: usize,
    pub bellman_error: f64,
    pub prob: f64,
}

/// Outcome of the SG-SP certificate for a point `(v, π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgspReport {
    pub objective: f64,
    pub max_constraint_violation: f64,
    pub max_sgsp_violation: f64,
    pub tol: f64,
    pub certified: bool,
    pub per_entry: Vec<SgspEntry>,
}

impl SgspReport {
    pub fn total_entries(&self) -> usize {
        self.per_entry.len()
    }
}

/// Certifies `(v, π)` when it is feasible within `tol` and every
/// complementarity product `|π^i(x,a) g^i_{x,a}|` is at most `tol`.
pub fn sgsp_check(
    game: &StochasticGame,
    values: &ValueProfile,
    policy: &PolicyProfile,
    tol: f64,
) -> Result<SgspReport> {
    if !(tol > 0.0) {
        return Err(SgspError::Config(format!("certificate tolerance must be positive, got {tol}")));
    }
    let table = BellmanTable::compute(game, values, policy)?;
    Ok(report_from(&table, policy, tol))
}

pub(crate) fn report_from(table: &BellmanTable, policy: &PolicyProfile, tol: f64) -> SgspReport {
    let max_constraint_violation = feasibility_from(table, policy);
    let mut max_sgsp_violation = 0.0f64;
    let mut per_entry = Vec::new();
    for (agent, rows) in policy.rows().iter().enumerate() {
        for (x, row) in rows.iter().enumerate() {
            for (a, &p) in row.iter().enumerate() {
                let g = table.own[agent][x][a];
                max_sgsp_violation = max_sgsp_violation.max((p * g).abs());
                per_entry.push(SgspEntry {
                    agent,
                    state: x,
                    action: a,
                    bellman_error: g,
                    prob: p,
                });
            }
        }
    }
    SgspReport {
        objective: table.objective(),
        max_constraint_violation,
        max_sgsp_violation,
        tol,
        certified: max_constraint_violation <= tol && max_sgsp_violation <= tol,
        per_entry,
    }
}

/// `∂f/∂π^i(x, a^i) = -Σ_j g^j_{x,a^i}(v^j, π^{-i})`.
pub fn grad_f(
    game: &StochasticGame,
    values: &ValueProfile,
    policy: &PolicyProfile,
    agent: usize,
    state: usize,
    action: usize,
) -> Result<f64> {
    // validates the coordinate
    game.q_value(values, policy, agent, state, action)?;
    let total: f64 = (0..game.n_agents())
        .map(|j| game.conditional_backup(values, policy, agent, state, action, j) - values.get(j, state))
        .sum();
    Ok(-total)
}

/// Per-coordinate decrement `-(π^i)^{α'} |g^i| bsgn(∂f/∂π^i)`.
#[allow(clippy::too_many_arguments)]
pub fn descent_direction(
    game: &StochasticGame,
    values: &ValueProfile,
    policy: &PolicyProfile,
    agent: usize,
    state: usize,
    action: usize,
    alpha_prime: f64,
    width: f64,
) -> Result<f64> {
    check_alpha(alpha_prime)?;
    let sign = Bsgn::new(width)?;
    let g = game.bellman_error(values, policy, agent, state, action)?;
    let grad = grad_f(game, values, policy, agent, state, action)?;
    Ok(direction(policy.prob(agent, state, action), g, grad, alpha_prime, sign))
}

pub(crate) fn check_alpha(alpha_prime: f64) -> Result<()> {
    if !(alpha_prime >= 0.5) || !alpha_prime.is_finite() {
        return Err(SgspError::Config(format!("alpha' must be at least 0.5, got {alpha_prime}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn direction(prob: f64, g: f64, grad: f64, alpha_prime: f64, sign: Bsgn) -> f64 {
    if prob <= 0.0 {
        return 0.0;
    }
    -powf_prob(prob, alpha_prime) * g.abs() * sign.apply(grad)
}

#[inline]
pub(crate) fn powf_prob(prob: f64, alpha_prime: f64) -> f64 {
    if alpha_prime == 0.5 {
        prob.sqrt()
    } else {
        prob.powf(alpha_prime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_game, random_policy, random_values};
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn bsgn_values() {
        assert_eq!(bsgn(0.5, 1e-4).unwrap(), 1.0);
        assert_eq!(bsgn(0.0, 1e-4).unwrap(), 0.0);
        let nu = 1e-4;
        assert!((bsgn(-nu / 2.0, nu).unwrap() + 0.5).abs() < 1e-15);
        assert!(bsgn(1.0, 0.0).is_err());
        assert!(bsgn(1.0, -1.0).is_err());
    }

    #[test]
    fn simplex_examples() {
        let p = project_simplex(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(p, vec![0.2, 0.3, 0.5]);
        let p = project_simplex(&[1.2, -0.2]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        let p = project_simplex(&[0.6, 0.6]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(project_simplex(&[]).is_err());
        assert!(project_simplex(&[f64::NAN]).is_err());
    }

    #[test]
    fn objective_vanishes_at_policy_values() {
        let mut rng = seeded(21);
        for _ in 0..20 {
            let game = random_game(&mut rng, 2, 3, &[2, 3]);
            let pi = random_policy(&mut rng, &game);
            let v = game.exact_value(&pi).unwrap();
            assert!(objective_f(&game, &v, &pi).unwrap().abs() < 1e-9);
            let table = BellmanTable::compute(&game, &v, &pi).unwrap();
            for i in 0..2 {
                for x in 0..3 {
                    let mean: f64 = pi.row(i, x).iter().zip(&table.own[i][x]).map(|(p, g)| p * g).sum();
                    assert!(mean.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn objective_matches_recomputation_after_value_bump() {
        let mut rng = seeded(4);
        let game = random_game(&mut rng, 2, 3, &[2, 2]);
        let pi = random_policy(&mut rng, &game);
        let v = random_values(&mut rng, &game, 2.0);
        let eps = 1e-3;
        let mut bumped = v.clone();
        bumped.set(1, 2, v.get(1, 2) + eps);
        // f is affine in v^1(2): the change is eps * (1 - β Σ_x P_π(x→2))
        let chain = game.induced_chain(&pi).unwrap();
        let mass: f64 = (0..3).map(|x| chain.transition[x][2]).sum();
        let expected = eps * (1.0 - game.discount() * mass);
        let got = objective_f(&game, &bumped, &pi).unwrap() - objective_f(&game, &v, &pi).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn table_agrees_with_entrywise_operations() {
        let mut rng = seeded(8);
        let game = random_game(&mut rng, 3, 2, &[2, 3, 2]);
        let pi = random_policy(&mut rng, &game);
        let v = random_values(&mut rng, &game, 3.0);
        let table = BellmanTable::compute(&game, &v, &pi).unwrap();
        assert!((table.objective() - objective_f(&game, &v, &pi).unwrap()).abs() < 1e-12);
        for i in 0..3 {
            for x in 0..2 {
                for a in 0..game.n_actions(x, i) {
                    let g = game.bellman_error(&v, &pi, i, x, a).unwrap();
                    assert!((table.own[i][x][a] - g).abs() < 1e-12);
                    let grad = grad_f(&game, &v, &pi, i, x, a).unwrap();
                    assert!((table.grad(i, x, a) - grad).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_agent_gradient_is_negated_error() {
        let mut rng = seeded(12);
        let game = random_game(&mut rng, 1, 3, &[3]);
        let pi = random_policy(&mut rng, &game);
        let v = random_values(&mut rng, &game, 1.0);
        for x in 0..3 {
            for a in 0..3 {
                let g = game.bellman_error(&v, &pi, 0, x, a).unwrap();
                assert_eq!(grad_f(&game, &v, &pi, 0, x, a).unwrap(), -g);
            }
        }
    }

    #[test]
    fn negative_probability_is_a_violation() {
        let mut rng = seeded(1);
        let game = random_game(&mut rng, 2, 1, &[2, 2]);
        let pi = PolicyProfile::from_rows(vec![vec![vec![1.1, -0.1]], vec![vec![0.5, 0.5]]]);
        let v = ValueProfile::constant(2, 1, 100.0);
        assert!(feasibility(&game, &v, &pi).unwrap() >= 0.1);
    }

    #[test]
    fn inflated_values_are_feasible() {
        let mut rng = seeded(2);
        let game = random_game(&mut rng, 2, 3, &[2, 3]);
        let pi = random_policy(&mut rng, &game);
        let v = ValueProfile::constant(2, 3, game.value_bound());
        assert!(feasibility(&game, &v, &pi).unwrap() <= 1e-12);
    }

    #[test]
    fn descent_direction_boundaries() {
        let mut rng = seeded(3);
        let game = random_game(&mut rng, 2, 2, &[2, 2]);
        let pi = PolicyProfile::deterministic(&game, |_, _| 0);
        let v = random_values(&mut rng, &game, 1.0);
        assert_eq!(descent_direction(&game, &v, &pi, 0, 0, 1, 0.5, 1e-4).unwrap(), 0.0);
        assert!(descent_direction(&game, &v, &pi, 0, 0, 0, 0.4, 1e-4).is_err());
        // g = 0 for a single-action-supported state at exact values
        let exact = game.exact_value(&pi).unwrap();
        assert!(descent_direction(&game, &exact, &pi, 0, 0, 0, 0.5, 1e-4).unwrap().abs() < 1e-9);
    }

    #[test]
    fn report_invariants() {
        let mut rng = seeded(33);
        for _ in 0..30 {
            let game = random_game(&mut rng, 2, 2, &[2, 2]);
            let pi = random_policy(&mut rng, &game);
            let v = random_values(&mut rng, &game, 3.0);
            let r = sgsp_check(&game, &v, &pi, 1e-6).unwrap();
            let entries = r.total_entries() as f64;
            assert!(r.objective >= -r.max_constraint_violation * entries - 1e-12);
        }
        assert!(sgsp_check(&random_game(&mut rng, 1, 1, &[2]), &ValueProfile::zeros(1, 1),
            &PolicyProfile::from_rows(vec![vec![vec![0.5, 0.5]]]), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn bsgn_is_odd_bounded_lipschitz(x in -1.0f64..1.0, y in -1.0f64..1.0, nu in 1e-6f64..0.5) {
            let s = Bsgn::new(nu).unwrap();
            prop_assert_eq!(s.apply(-x), -s.apply(x));
            prop_assert!(s.apply(x).abs() <= 1.0);
            prop_assert!((s.apply(x) - s.apply(y)).abs() <= (x - y).abs() / nu + 1e-12);
        }

        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-3.0f64..3.0, 1..6),
            shift in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
            let pa = project_simplex(&a).unwrap();
            let pb = project_simplex(&b).unwrap();
            prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pa.iter().all(|&p| p >= 0.0));
            let again = project_simplex(&pa).unwrap();
            for (x, y) in pa.iter().zip(&again) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let d_out: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d_out <= d_in + 1e-12);
        }
    }
}

//! Comparison learners: NashQ and Friend-Q over joint-action Q tables, and the
//! bimatrix equilibrium solver NashQ needs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::environments::Environment;
use crate::error::{Result, SgspError};
use crate::game::PolicyProfile;
use crate::rng::{sample_index, SimRng};
use crate::schedule::SgspConfig;
use crate::selfplay::{run_selfplay, JointLearner, SelfPlayDriver, SelfPlayOutcome, Transition};
use crate::trace::TraceMeta;

/// Slack for the best-response conditions of a returned equilibrium.
const NASH_SLACK: f64 = 1e-9;

/// Initial exploration rate; it decays as `1/√visits(x)`.
pub const EPSILON0: f64 = 0.1;

/// A mixed equilibrium `(row strategy, column strategy)` of a bimatrix game.
pub type BimatrixSolution = (Vec<f64>, Vec<f64>);

/// One Nash equilibrium of the bimatrix game `(a, b)` by support enumeration.
///
/// Equal-size support pairs are tried first by size, then in lexicographic
/// order of the row and column supports. Unequal supports follow for
/// degenerate games. A candidate is returned only after its best-response
/// conditions hold to within `1e-9`.
pub fn bimatrix_nash(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<BimatrixSolution> {
    let m = a.len();
    let k = a.first().map_or(0, Vec::len);
    if m == 0 || k == 0 {
        return Err(SgspError::Structure("bimatrix game needs at least one action per player".into()));
    }
    if b.len() != m || a.iter().chain(b).any(|row| row.len() != k) {
        return Err(SgspError::Structure("payoff matrices must both be m×k".into()));
    }
    if a.iter().chain(b).flatten().any(|v| !v.is_finite()) {
        return Err(SgspError::Numerical("non-finite payoff".into()));
    }
    if let Some(sol) = pure_equilibrium(a, b) {
        return Ok(sol);
    }
    let rows_by_size = subsets_by_size(m);
    let cols_by_size = subsets_by_size(k);
    for size in 2..=m.min(k) {
        for rs in &rows_by_size[size] {
            for cs in &cols_by_size[size] {
                if let Some(sol) = support_candidate(a, b, rs, cs) {
                    return Ok(sol);
                }
            }
        }
    }
    for rsize in 1..=m {
        for csize in 1..=k {
            if rsize == csize {
                continue;
            }
            for rs in &rows_by_size[rsize] {
                for cs in &cols_by_size[csize] {
                    if let Some(sol) = support_candidate(a, b, rs, cs) {
                        return Ok(sol);
                    }
                }
            }
        }
    }
    Err(SgspError::Numerical(format!("no verified equilibrium found for a {m}×{k} game")))
}

fn pure_equilibrium(a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<BimatrixSolution> {
    let (m, k) = (a.len(), a[0].len());
    for i in 0..m {
        for j in 0..k {
            let row_best = (0..m).all(|r| a[r][j] <= a[i][j] + NASH_SLACK);
            let col_best = (0..k).all(|c| b[i][c] <= b[i][j] + NASH_SLACK);
            if row_best && col_best {
                let mut x = vec![0.0; m];
                let mut y = vec![0.0; k];
                x[i] = 1.0;
                y[j] = 1.0;
                return Some((x, y));
            }
        }
    }
    None
}

/// `by_size[s]` lists the `s`-subsets of `0..n` in lexicographic order.
fn subsets_by_size(n: usize) -> Vec<Vec<Vec<usize>>> {
    let mut by_size = vec![Vec::new(); n + 1];
    for mask in 1u32..(1 << n) {
        let set: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        by_size[set.len()].push(set);
    }
    for sets in &mut by_size {
        sets.sort();
    }
    by_size
}

/// Strategy on `support` that makes the opponent indifferent over
/// `opp_support`; `payoff(o, s)` is the opponent's payoff.
fn indifference(payoff: impl Fn(usize, usize) -> f64, support: &[usize], opp_support: &[usize]) -> Option<Vec<f64>> {
    let n = support.len();
    let rows = opp_support.len() + 1;
    let mut lhs = DMatrix::zeros(rows, n + 1);
    let mut rhs = DVector::zeros(rows);
    for (r, &o) in opp_support.iter().enumerate() {
        for (c, &s) in support.iter().enumerate() {
            lhs[(r, c)] = payoff(o, s);
        }
        lhs[(r, n)] = -1.0;
    }
    for c in 0..n {
        lhs[(rows - 1, c)] = 1.0;
    }
    rhs[rows - 1] = 1.0;
    let sol = if rows == n + 1 {
        lhs.clone().lu().solve(&rhs)
    } else {
        None
    }
    .or_else(|| lhs.svd(true, true).solve(&rhs, 1e-12).ok())?;
    let probs: Vec<f64> = sol.iter().take(n).copied().collect();
    if probs.iter().any(|p| !p.is_finite() || *p < -NASH_SLACK) {
        return None;
    }
    let clipped: Vec<f64> = probs.iter().map(|p| p.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    (total > 0.0).then(|| clipped.iter().map(|p| p / total).collect())
}

fn support_candidate(a: &[Vec<f64>], b: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Option<BimatrixSolution> {
    let (m, k) = (a.len(), a[0].len());
    let y_s = indifference(|r, c| a[r][c], cols, rows)?;
    let x_s = indifference(|c, r| b[r][c], rows, cols)?;
    let mut x = vec![0.0; m];
    let mut y = vec![0.0; k];
    for (&r, p) in rows.iter().zip(x_s) {
        x[r] = p;
    }
    for (&c, p) in cols.iter().zip(y_s) {
        y[c] = p;
    }
    is_equilibrium(a, b, &x, &y).then_some((x, y))
}

fn is_equilibrium(a: &[Vec<f64>], b: &[Vec<f64>], x: &[f64], y: &[f64]) -> bool {
    let row_payoffs: Vec<f64> = a.iter().map(|row| dot(row, y)).collect();
    let col_payoffs: Vec<f64> = (0..y.len())
        .map(|c| x.iter().zip(b).map(|(p, row)| p * row[c]).sum())
        .collect();
    let row_value = dot(x, &row_payoffs);
    let col_value = dot(y, &col_payoffs);
    row_payoffs.iter().all(|&u| u <= row_value + NASH_SLACK)
        && col_payoffs.iter().all(|&u| u <= col_value + NASH_SLACK)
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `q[agent][x][joint]` with joint actions indexed row-major over the agents'
/// action counts at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointQTable {
    q: Vec<Vec<Vec<f64>>>,
    /// `[x][agent]`
    counts: Vec<Vec<usize>>,
}

impl JointQTable {
    pub fn zeros<E: Environment + ?Sized>(env: &E) -> Self {
        let n = env.n_agents();
        let counts: Vec<Vec<usize>> = (0..env.n_observations())
            .map(|x| (0..n).map(|i| env.n_actions(x, i)).collect())
            .collect();
        let q = (0..n)
            .map(|_| counts.iter().map(|c| vec![0.0; c.iter().product()]).collect())
            .collect();
        Self { q, counts }
    }

    pub fn n_agents(&self) -> usize {
        self.q.len()
    }

    pub fn n_actions(&self, state: usize, agent: usize) -> usize {
        self.counts[state][agent]
    }

    pub fn joint_index(&self, state: usize, actions: &[usize]) -> usize {
        actions
            .iter()
            .zip(&self.counts[state])
            .fold(0, |acc, (&a, &n)| acc * n + a)
    }

    pub fn get(&self, agent: usize, state: usize, joint: usize) -> f64 {
        self.q[agent][state][joint]
    }

    pub fn row(&self, agent: usize, state: usize) -> &[f64] {
        &self.q[agent][state]
    }

    pub fn set(&mut self, agent: usize, state: usize, joint: usize, value: f64) {
        self.q[agent][state][joint] = value;
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().flatten().flatten().all(|v| v.is_finite())
    }

    /// Two-player stage game at `state` as `(A, B)` matrices.
    fn bimatrix(&self, state: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let k = self.counts[state][1];
        let split = |agent: usize| self.q[agent][state].chunks(k).map(<[f64]>::to_vec).collect();
        (split(0), split(1))
    }
}

fn exploration_rate(visits: u64) -> f64 {
    EPSILON0 / (visits.max(1) as f64).sqrt()
}

/// NashQ for two agents: Q backups use the value of a stage-game equilibrium
/// at the next state, and each agent plays its equilibrium strategy.
#[derive(Debug, Clone)]
pub struct NashQ {
    table: JointQTable,
    discount: f64,
    config: SgspConfig,
    visits: Vec<u64>,
    /// Cached stage equilibrium per state, cleared whenever its Q changes.
    cache: Vec<Option<BimatrixSolution>>,
}

impl NashQ {
    pub fn new<E: Environment + ?Sized>(env: &E, config: SgspConfig) -> Result<Self> {
        if env.n_agents() != 2 {
            return Err(SgspError::Unsupported(format!(
                "NashQ needs exactly 2 agents, got {}",
                env.n_agents()
            )));
        }
        config.validate()?;
        Ok(Self {
            table: JointQTable::zeros(env),
            discount: env.discount(),
            config,
            visits: vec![0; env.n_observations()],
            cache: vec![None; env.n_observations()],
        })
    }

    pub fn table(&self) -> &JointQTable {
        &self.table
    }

    pub fn stage_equilibrium(&mut self, state: usize) -> &BimatrixSolution {
        if self.cache[state].is_none() {
            let (a, b) = self.table.bimatrix(state);
            let sol = bimatrix_nash(&a, &b).unwrap_or_else(|_| {
                // cannot happen for finite payoffs; keep the learner running
                let (m, k) = (a.len(), a[0].len());
                (vec![1.0 / m as f64; m], vec![1.0 / k as f64; k])
            });
            self.cache[state] = Some(sol);
        }
        self.cache[state].as_ref().expect("filled above")
    }

    fn stage_value(&mut self, state: usize, agent: usize) -> f64 {
        let (x, y) = self.stage_equilibrium(state).clone();
        let k = y.len();
        self.table
            .row(agent, state)
            .iter()
            .enumerate()
            .map(|(j, q)| x[j / k] * y[j % k] * q)
            .sum()
    }
}

impl JointLearner for NashQ {
    fn act(&mut self, state: usize, _step: u64, rng: &mut SimRng, actions: &mut [usize]) {
        self.visits[state] += 1;
        let eps = exploration_rate(self.visits[state]);
        let (x, y) = self.stage_equilibrium(state).clone();
        for (agent, strategy) in [x, y].iter().enumerate() {
            actions[agent] = if rng.gen::<f64>() < eps {
                rng.gen_range(0..strategy.len())
            } else {
                sample_index(strategy, rng)
            };
        }
    }

    fn observe(&mut self, tr: &Transition<'_>, step: u64) -> Result<()> {
        let c = self.config.value_step.at(step + 1);
        let joint = self.table.joint_index(tr.state, tr.actions);
        let targets: Vec<f64> = (0..2)
            .map(|j| tr.rewards[j] + self.discount * self.stage_value(tr.next, j))
            .collect();
        for (j, target) in targets.into_iter().enumerate() {
            let q = self.table.get(j, tr.state, joint);
            let updated = q + c * (target - q);
            if !updated.is_finite() {
                return Err(SgspError::Numerical(format!("non-finite NashQ estimate at state {}", tr.state)));
            }
            self.table.set(j, tr.state, joint, updated);
        }
        self.cache[tr.state] = None;
        Ok(())
    }

    fn policy_row(&mut self, agent: usize, state: usize) -> Vec<f64> {
        let (x, y) = self.stage_equilibrium(state);
        if agent == 0 {
            x.clone()
        } else {
            y.clone()
        }
    }
}

/// Friend-Q: every agent backs up the best joint action of its own table and
/// plays its component of that joint action.
#[derive(Debug, Clone)]
pub struct FriendQ {
    table: JointQTable,
    discount: f64,
    config: SgspConfig,
    visits: Vec<u64>,
    scratch: Vec<usize>,
}

impl FriendQ {
    pub fn new<E: Environment + ?Sized>(env: &E, config: SgspConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            table: JointQTable::zeros(env),
            discount: env.discount(),
            config,
            visits: vec![0; env.n_observations()],
            scratch: vec![0; env.n_agents()],
        })
    }

    pub fn table(&self) -> &JointQTable {
        &self.table
    }

    /// First joint action (row-major order) maximizing `Q^agent(state, ·)`.
    pub fn greedy_joint(&self, agent: usize, state: usize) -> usize {
        let row = self.table.row(agent, state);
        let mut best = 0;
        for (j, &q) in row.iter().enumerate() {
            if q > row[best] {
                best = j;
            }
        }
        best
    }

    fn greedy_action(&self, agent: usize, state: usize) -> usize {
        let counts = &self.table.counts[state];
        let stride: usize = counts[agent + 1..].iter().product();
        (self.greedy_joint(agent, state) / stride) % counts[agent]
    }
}

impl JointLearner for FriendQ {
    fn act(&mut self, state: usize, _step: u64, rng: &mut SimRng, actions: &mut [usize]) {
        self.visits[state] += 1;
        let eps = exploration_rate(self.visits[state]);
        for (agent, a) in actions.iter_mut().enumerate() {
            *a = if rng.gen::<f64>() < eps {
                rng.gen_range(0..self.table.n_actions(state, agent))
            } else {
                self.greedy_action(agent, state)
            };
        }
    }

    fn observe(&mut self, tr: &Transition<'_>, step: u64) -> Result<()> {
        let c = self.config.value_step.at(step + 1);
        self.scratch.copy_from_slice(tr.actions);
        let joint = self.table.joint_index(tr.state, &self.scratch);
        for j in 0..self.table.n_agents() {
            let best_next = self.table.get(j, tr.next, self.greedy_joint(j, tr.next));
            let q = self.table.get(j, tr.state, joint);
            let updated = q + c * (tr.rewards[j] + self.discount * best_next - q);
            if !updated.is_finite() {
                return Err(SgspError::Numerical(format!("non-finite Friend-Q estimate at state {}", tr.state)));
            }
            self.table.set(j, tr.state, joint, updated);
        }
        Ok(())
    }

    fn policy_row(&mut self, agent: usize, state: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.table.n_actions(state, agent)];
        row[self.greedy_action(agent, state)] = 1.0;
        row
    }
}

/// Result of a baseline run.
#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub policy: PolicyProfile,
    pub table: JointQTable,
    pub trace: crate::trace::RunTrace,
}

/// Runs NashQ self-play for `config.max_iters` steps.
pub fn nashq_run<E: Environment + ?Sized>(
    env: &E,
    config: &SgspConfig,
    rng: SimRng,
    meta: TraceMeta,
) -> Result<BaselineOutcome> {
    let learner = NashQ::new(env, config.clone())?;
    let mut driver = SelfPlayDriver::new(env, learner, rng, config.snapshot_every);
    let SelfPlayOutcome { policy, trace } = run_selfplay(&mut driver, config.max_iters, meta)?;
    Ok(BaselineOutcome {
        policy,
        table: driver.learner().table.clone(),
        trace,
    })
}

/// Runs Friend-Q self-play for `config.max_iters` steps.
pub fn friendq_run<E: Environment + ?Sized>(
    env: &E,
    config: &SgspConfig,
    rng: SimRng,
    meta: TraceMeta,
) -> Result<BaselineOutcome> {
    let learner = FriendQ::new(env, config.clone())?;
    let mut driver = SelfPlayDriver::new(env, learner, rng, config.snapshot_every);
    let SelfPlayOutcome { policy, trace } = run_selfplay(&mut driver, config.max_iters, meta)?;
    Ok(BaselineOutcome {
        policy,
        table: driver.learner().table.clone(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{build_hart_game, hart_payoffs};
    use crate::game::StochasticGame;
    use crate::oracle::bimatrix_deviation_gain;
    use crate::rng::seeded;

    fn hart_matrices() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let p = hart_payoffs();
        let a = p.iter().map(|row| row.iter().map(|c| c.0).collect()).collect();
        let b = p.iter().map(|row| row.iter().map(|c| c.1).collect()).collect();
        (a, b)
    }

    #[test]
    fn matching_pennies() {
        let a = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let (x, y) = bimatrix_nash(&a, &b).unwrap();
        for p in x.iter().chain(&y) {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn coordination_returns_first_pure_equilibrium() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let (x, y) = bimatrix_nash(&a, &a).unwrap();
        assert_eq!((x, y), (vec![1.0, 0.0], vec![1.0, 0.0]));
    }

    #[test]
    fn hart_stage_game_equilibrium_verifies() {
        let (a, b) = hart_matrices();
        let (x, y) = bimatrix_nash(&a, &b).unwrap();
        assert!(bimatrix_deviation_gain(&a, &b, &x, &y) <= 1e-9);
        // (a3, a3) is the only pure equilibrium
        assert_eq!((x, y), (vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(bimatrix_nash(&[], &[]).is_err());
        assert!(bimatrix_nash(&[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
        assert!(bimatrix_nash(&[vec![f64::NAN]], &[vec![0.0]]).is_err());
    }

    #[test]
    fn degenerate_games_still_solve() {
        let zero = vec![vec![0.0; 3]; 2];
        let (x, y) = bimatrix_nash(&zero, &zero).unwrap();
        assert_eq!((x, y), (vec![1.0, 0.0], vec![1.0, 0.0, 0.0]));
        // column player indifferent, row player strictly prefers row 1
        let a = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let b = vec![vec![2.0, 2.0], vec![3.0, 3.0]];
        let (x, y) = bimatrix_nash(&a, &b).unwrap();
        assert!(bimatrix_deviation_gain(&a, &b, &x, &y) <= 1e-9);
    }

    #[test]
    fn zero_rewards_keep_nashq_at_zero() {
        let game = StochasticGame::new(
            2,
            0.9,
            vec![vec![2, 2]; 2],
            vec![vec![vec![(0, 0.5), (1, 0.5)]; 4]; 2],
            vec![vec![vec![0.0, 0.0]; 4]; 2],
        )
        .unwrap();
        let cfg = SgspConfig {
            max_iters: 500,
            ..SgspConfig::default()
        };
        let out = nashq_run(&game, &cfg, seeded(1), TraceMeta::default()).unwrap();
        assert_eq!(out.table.max_abs(), 0.0);
        assert!(out.trace.series("policy_change").iter().all(|&(_, c)| c == 0.0));
        assert!(out.policy.is_valid(1e-12));
    }

    #[test]
    fn nashq_rejects_three_agents() {
        let game = StochasticGame::new(
            3,
            0.9,
            vec![vec![1, 1, 1]],
            vec![vec![vec![(0, 1.0)]]],
            vec![vec![vec![0.0; 3]]],
        )
        .unwrap();
        let err = nashq_run(&game, &SgspConfig::default(), seeded(0), TraceMeta::default()).unwrap_err();
        assert!(matches!(err, SgspError::Unsupported(_)));
    }

    #[test]
    fn q_tables_stay_bounded() {
        let game = build_hart_game(0.8).unwrap();
        let cfg = SgspConfig {
            max_iters: 5000,
            ..SgspConfig::default()
        };
        let bound = game.max_abs_reward() / (1.0 - game.discount()) * 1.1;
        for out in [
            nashq_run(&game, &cfg, seeded(2), TraceMeta::default()).unwrap(),
            friendq_run(&game, &cfg, seeded(2), TraceMeta::default()).unwrap(),
        ] {
            assert!(out.table.max_abs() <= bound);
            assert!(out.policy.is_valid(1e-12));
        }
    }

    #[test]
    fn friendq_with_one_agent_is_q_learning() {
        let game = StochasticGame::new(
            1,
            0.7,
            vec![vec![2]; 3],
            vec![
                vec![vec![(1, 1.0)], vec![(2, 0.3), (0, 0.7)]],
                vec![vec![(2, 1.0)], vec![(0, 1.0)]],
                vec![vec![(0, 0.5), (1, 0.5)], vec![(2, 1.0)]],
            ],
            vec![
                vec![vec![0.5], vec![-1.0]],
                vec![vec![1.0], vec![0.0]],
                vec![vec![0.2], vec![2.0]],
            ],
        )
        .unwrap();
        let cfg = SgspConfig {
            max_iters: 3000,
            ..SgspConfig::default()
        };
        let out = friendq_run(&game, &cfg, seeded(42), TraceMeta::default()).unwrap();

        // textbook tabular Q-learning with the same draws
        let mut rng = seeded(42);
        let mut state = rng.gen_range(0..3);
        let mut q = vec![[0.0f64; 2]; 3];
        let mut visits = [0u64; 3];
        let argmax = |row: &[f64; 2]| if row[1] > row[0] { 1 } else { 0 };
        for n in 0..cfg.max_iters {
            visits[state] += 1;
            let eps = 0.1 / (visits[state] as f64).sqrt();
            let a = if rng.gen::<f64>() < eps {
                rng.gen_range(0..2)
            } else {
                argmax(&q[state])
            };
            let (next, r) = game.sample_step(state, &[a], &mut rng).unwrap();
            let c = cfg.value_step.at(n + 1);
            let target = r[0] + 0.7 * q[next][argmax(&q[next])];
            q[state][a] += c * (target - q[state][a]);
            state = next;
        }
        for (x, row) in q.iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                assert_eq!(out.table.get(0, x, a), v);
            }
        }
    }
}

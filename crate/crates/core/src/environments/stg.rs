//! Stick-Together Game: two agents on an `M × M` grid who are rewarded for
//! staying close to each other.
//!
//! Positions are indexed `row * M + col`; a joint state is `p1 * M² + p2`.
//! Each agent's move lands on the targeted cell with the highest probability:
//! `q(s'|s,a) ∝ 2^{-‖s' - (s+a)‖₁}` over the on-grid one-step neighbourhood of
//! `s` (including `s`). Both agents receive `1 - e^{‖s¹ - s²‖₁}`.

use rand::Rng;

use super::Environment;
use crate::error::{structure, Result, SgspError};
use crate::game::StochasticGame;
use crate::rng::{sample_index, SimRng};

/// Unit moves in canonical order: stay, down, up, right, left.
pub const MOVES: [(i64, i64); 5] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];

/// Largest grid side for which [`Stg::to_game`] materializes tables.
pub const MAX_TABLE_SIDE: usize = 6;

#[derive(Debug, Clone)]
pub struct Stg {
    side: usize,
    discount: f64,
    /// Feasible move indices (into [`MOVES`]) per position.
    feasible: Vec<Vec<usize>>,
    /// `[position][local action]` sparse next-position distribution.
    kernels: Vec<Vec<Vec<(usize, f64)>>>,
}

impl Stg {
    pub fn new(side: usize, discount: f64) -> Result<Self> {
        if side < 2 {
            return Err(SgspError::Config(format!("grid side must be at least 2, got {side}")));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(SgspError::Config(format!("discount must lie in (0,1), got {discount}")));
        }
        let m = side as i64;
        let on_grid = |r: i64, c: i64| (0..m).contains(&r) && (0..m).contains(&c);
        let mut feasible = Vec::with_capacity(side * side);
        let mut kernels = Vec::with_capacity(side * side);
        for pos in 0..side * side {
            let (r, c) = ((pos / side) as i64, (pos % side) as i64);
            let moves: Vec<usize> = (0..MOVES.len())
                .filter(|&k| on_grid(r + MOVES[k].0, c + MOVES[k].1))
                .collect();
            let neighbourhood: Vec<(i64, i64)> = MOVES
                .iter()
                .map(|&(dr, dc)| (r + dr, c + dc))
                .filter(|&(nr, nc)| on_grid(nr, nc))
                .collect();
            let rows = moves
                .iter()
                .map(|&k| {
                    let target = (r + MOVES[k].0, c + MOVES[k].1);
                    let weights: Vec<f64> = neighbourhood
                        .iter()
                        .map(|&(nr, nc)| {
                            let d = (nr - target.0).abs() + (nc - target.1).abs();
                            0.5f64.powi(d as i32)
                        })
                        .collect();
                    let total: f64 = weights.iter().sum();
                    neighbourhood
                        .iter()
                        .zip(&weights)
                        .map(|(&(nr, nc), w)| ((nr * m + nc) as usize, w / total))
                        .collect()
                })
                .collect();
            feasible.push(moves);
            kernels.push(rows);
        }
        Ok(Self {
            side,
            discount,
            feasible,
            kernels,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_positions(&self) -> usize {
        self.side * self.side
    }

    pub fn n_states(&self) -> usize {
        self.n_positions() * self.n_positions()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn coords(&self, position: usize) -> (usize, usize) {
        (position / self.side, position % self.side)
    }

    pub fn position(&self, row: usize, col: usize) -> usize {
        row * self.side + col
    }

    pub fn joint_state(&self, p1: usize, p2: usize) -> usize {
        p1 * self.n_positions() + p2
    }

    pub fn positions(&self, state: usize) -> (usize, usize) {
        (state / self.n_positions(), state % self.n_positions())
    }

    /// Move indices (into [`MOVES`]) available at `position`.
    pub fn feasible_moves(&self, position: usize) -> &[usize] {
        &self.feasible[position]
    }

    /// Per-agent kernel row for local action `action` at `position`.
    pub fn kernel(&self, position: usize, action: usize) -> &[(usize, f64)] {
        &self.kernels[position][action]
    }

    pub fn manhattan(&self, p1: usize, p2: usize) -> usize {
        let (r1, c1) = self.coords(p1);
        let (r2, c2) = self.coords(p2);
        r1.abs_diff(r2) + c1.abs_diff(c2)
    }

    pub fn state_distance(&self, state: usize) -> usize {
        let (p1, p2) = self.positions(state);
        self.manhattan(p1, p2)
    }

    /// Common reward of both agents in `state`.
    pub fn reward(&self, state: usize) -> f64 {
        1.0 - (self.state_distance(state) as f64).exp()
    }

    fn sample_position(&self, position: usize, action: usize, rng: &mut SimRng) -> usize {
        let row = &self.kernels[position][action];
        let probs: Vec<f64> = row.iter().map(|e| e.1).collect();
        row[sample_index(&probs, rng)].0
    }

    /// Materializes the full joint game (product kernels).
    pub fn to_game(&self) -> Result<StochasticGame> {
        if self.side > MAX_TABLE_SIDE {
            return Err(SgspError::Unsupported(format!(
                "grid side {} too large to tabulate (max {MAX_TABLE_SIDE})",
                self.side
            )));
        }
        let np = self.n_positions();
        let mut action_counts = Vec::with_capacity(self.n_states());
        let mut transitions = Vec::with_capacity(self.n_states());
        let mut rewards = Vec::with_capacity(self.n_states());
        for state in 0..self.n_states() {
            let (p1, p2) = self.positions(state);
            let (n1, n2) = (self.feasible[p1].len(), self.feasible[p2].len());
            let r = self.reward(state);
            let mut rows = Vec::with_capacity(n1 * n2);
            for a1 in 0..n1 {
                for a2 in 0..n2 {
                    let mut row = Vec::new();
                    for &(q1, w1) in &self.kernels[p1][a1] {
                        for &(q2, w2) in &self.kernels[p2][a2] {
                            row.push((q1 * np + q2, w1 * w2));
                        }
                    }
                    rows.push(row);
                }
            }
            action_counts.push(vec![n1, n2]);
            transitions.push(rows);
            rewards.push(vec![vec![r, r]; n1 * n2]);
        }
        StochasticGame::new(2, self.discount, action_counts, transitions, rewards)
    }
}

impl Environment for Stg {
    fn n_agents(&self) -> usize {
        2
    }

    fn n_observations(&self) -> usize {
        self.n_states()
    }

    fn n_actions(&self, observation: usize, agent: usize) -> usize {
        let (p1, p2) = self.positions(observation);
        self.feasible[if agent == 0 { p1 } else { p2 }].len()
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        let np = self.n_positions();
        self.joint_state(rng.gen_range(0..np), rng.gen_range(0..np))
    }

    fn observe(&self, state: usize) -> usize {
        state
    }

    fn step(&self, state: usize, actions: &[usize], rng: &mut SimRng, rewards: &mut [f64]) -> Result<usize> {
        let (p1, p2) = self.positions(state);
        if actions.len() != 2 || actions[0] >= self.feasible[p1].len() || actions[1] >= self.feasible[p2].len() {
            return structure(format!("infeasible joint action {actions:?} in state {state}"));
        }
        let r = self.reward(state);
        rewards[0] = r;
        rewards[1] = r;
        let q1 = self.sample_position(p1, actions[0], rng);
        let q2 = self.sample_position(p2, actions[1], rng);
        Ok(self.joint_state(q1, q2))
    }

    fn distance(&self, state: usize) -> Option<f64> {
        Some(self.state_distance(state) as f64)
    }
}

/// Mean inter-agent L1 distance over a window of visited joint states.
pub fn avg_distance(stg: &Stg, states: &[usize]) -> Result<f64> {
    if states.is_empty() {
        return structure("cannot average distance over an empty window");
    }
    let total: usize = states.iter().map(|&s| stg.state_distance(s)).sum();
    Ok(total as f64 / states.len() as f64)
}

/// STG seen through the coordinate-wise position difference
/// `Δ = (|r¹ - r²|, |c¹ - c²|)`.
///
/// Learners index values and policies by `Δ` and always choose among all five
/// moves; a move that would leave the grid is executed as "stay". The true
/// joint state still evolves underneath.
#[derive(Debug, Clone)]
pub struct DeltaStg {
    base: Stg,
    /// `[position][move]` → local action index of the base game.
    local: Vec<[usize; 5]>,
}

impl DeltaStg {
    pub fn new(base: Stg) -> Self {
        let local = (0..base.n_positions())
            .map(|pos| {
                let feasible = base.feasible_moves(pos);
                let stay = feasible.iter().position(|&k| k == 0).expect("stay is always feasible");
                let mut map = [stay; 5];
                for (local, &k) in feasible.iter().enumerate() {
                    map[k] = local;
                }
                map
            })
            .collect();
        Self { base, local }
    }

    pub fn base(&self) -> &Stg {
        &self.base
    }

    /// Index of `Δ` for a pair of positions; symmetric in its arguments.
    pub fn delta_index(&self, p1: usize, p2: usize) -> usize {
        let (r1, c1) = self.base.coords(p1);
        let (r2, c2) = self.base.coords(p2);
        r1.abs_diff(r2) * self.base.side + c1.abs_diff(c2)
    }

    pub fn delta(&self, p1: usize, p2: usize) -> (usize, usize) {
        let (r1, c1) = self.base.coords(p1);
        let (r2, c2) = self.base.coords(p2);
        (r1.abs_diff(r2), c1.abs_diff(c2))
    }
}

impl Environment for DeltaStg {
    fn n_agents(&self) -> usize {
        2
    }

    fn n_observations(&self) -> usize {
        self.base.side * self.base.side
    }

    fn n_actions(&self, _observation: usize, _agent: usize) -> usize {
        MOVES.len()
    }

    fn discount(&self) -> f64 {
        self.base.discount
    }

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        self.base.initial_state(rng)
    }

    fn observe(&self, state: usize) -> usize {
        let (p1, p2) = self.base.positions(state);
        self.delta_index(p1, p2)
    }

    fn step(&self, state: usize, actions: &[usize], rng: &mut SimRng, rewards: &mut [f64]) -> Result<usize> {
        if actions.len() != 2 || actions.iter().any(|&a| a >= MOVES.len()) {
            return structure(format!("invalid joint move {actions:?}"));
        }
        let (p1, p2) = self.base.positions(state);
        let local = [self.local[p1][actions[0]], self.local[p2][actions[1]]];
        self.base.step(state, &local, rng, rewards)
    }

    fn distance(&self, state: usize) -> Option<f64> {
        self.base.distance(state)
    }
}

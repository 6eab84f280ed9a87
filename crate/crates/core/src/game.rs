//! Finite discounted stochastic games and exact evaluation under a fixed
//! strategy profile.
//!
//! Joint actions are enumerated per state in row-major agent order: agent 0 is
//! the most significant digit, so for two agents with `m` and `k` actions the
//! joint index of `(a0, a1)` is `a0 * k + a1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{structure, Result, SgspError};
use crate::rng::sample_index;

/// Tolerance on transition-row sums accepted by [`StochasticGame::new`].
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Largest row-sum deviation the JSON loader will silently renormalize.
pub const LOADER_RENORMALIZE_TOL: f64 = 1e-9;

/// Sparse transition row: `(next_state, probability)` pairs.
pub type TransitionRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticGame {
    n_agents: usize,
    discount: f64,
    /// `[state][agent]`
    action_counts: Vec<Vec<usize>>,
    /// `[state][agent]`, stride of each agent's digit in the joint index.
    strides: Vec<Vec<usize>>,
    joint_counts: Vec<usize>,
    /// `[state][joint]`
    transitions: Vec<Vec<TransitionRow>>,
    /// `[state][joint][agent]`
    rewards: Vec<Vec<Vec<f64>>>,
}

impl StochasticGame {
    pub fn new(
        n_agents: usize,
        discount: f64,
        action_counts: Vec<Vec<usize>>,
        transitions: Vec<Vec<TransitionRow>>,
        rewards: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if n_agents == 0 {
            return structure("a game needs at least one agent");
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(SgspError::Config(format!(
                "discount must lie strictly inside (0,1), got {discount}"
            )));
        }
        let n_states = action_counts.len();
        if n_states == 0 {
            return structure("a game needs at least one state");
        }
        if transitions.len() != n_states || rewards.len() != n_states {
            return structure(format!(
                "expected {n_states} states in transitions and rewards, got {} and {}",
                transitions.len(),
                rewards.len()
            ));
        }
        let mut strides = Vec::with_capacity(n_states);
        let mut joint_counts = Vec::with_capacity(n_states);
        for (x, counts) in action_counts.iter().enumerate() {
            if counts.len() != n_agents {
                return structure(format!(
                    "state {x}: {} action counts for {n_agents} agents",
                    counts.len()
                ));
            }
            if counts.contains(&0) {
                return structure(format!("state {x}: every agent needs at least one action"));
            }
            let mut s = vec![1usize; n_agents];
            for k in (0..n_agents.saturating_sub(1)).rev() {
                s[k] = s[k + 1] * counts[k + 1];
            }
            let joint = s[0] * counts[0];
            if transitions[x].len() != joint || rewards[x].len() != joint {
                return structure(format!(
                    "state {x}: expected {joint} joint actions, got {} transitions and {} rewards",
                    transitions[x].len(),
                    rewards[x].len()
                ));
            }
            for (j, row) in transitions[x].iter().enumerate() {
                let mut sum = 0.0;
                for &(y, p) in row {
                    if y >= n_states {
                        return structure(format!("state {x}, joint {j}: next state {y} out of range"));
                    }
                    if !(p >= 0.0) || !p.is_finite() {
                        return structure(format!("state {x}, joint {j}: invalid probability {p}"));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return structure(format!(
                        "state {x}, joint {j}: transition row sums to {sum}"
                    ));
                }
                let r = &rewards[x][j];
                if r.len() != n_agents || r.iter().any(|v| !v.is_finite()) {
                    return structure(format!("state {x}, joint {j}: bad reward vector {r:?}"));
                }
            }
            strides.push(s);
            joint_counts.push(joint);
        }
        Ok(Self {
            n_agents,
            discount,
            action_counts,
            strides,
            joint_counts,
            transitions,
            rewards,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_states(&self) -> usize {
        self.action_counts.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn n_actions(&self, state: usize, agent: usize) -> usize {
        self.action_counts[state][agent]
    }

    pub fn action_counts(&self, state: usize) -> &[usize] {
        &self.action_counts[state]
    }

    pub fn n_joint(&self, state: usize) -> usize {
        self.joint_counts[state]
    }

    pub fn stride(&self, state: usize, agent: usize) -> usize {
        self.strides[state][agent]
    }

    /// Agent `agent`'s component of joint action `joint` in `state`.
    pub fn action_of(&self, state: usize, joint: usize, agent: usize) -> usize {
        (joint / self.strides[state][agent]) % self.action_counts[state][agent]
    }

    pub fn joint_index(&self, state: usize, actions: &[usize]) -> Result<usize> {
        if state >= self.n_states() {
            return structure(format!("state {state} out of range"));
        }
        if actions.len() != self.n_agents {
            return structure(format!(
                "joint action has {} components for {} agents",
                actions.len(),
                self.n_agents
            ));
        }
        let mut idx = 0;
        for (k, &a) in actions.iter().enumerate() {
            if a >= self.action_counts[state][k] {
                return structure(format!(
                    "agent {k} action {a} infeasible in state {state} ({} actions)",
                    self.action_counts[state][k]
                ));
            }
            idx += a * self.strides[state][k];
        }
        Ok(idx)
    }

    pub fn decode_joint(&self, state: usize, joint: usize, out: &mut [usize]) {
        for (k, slot) in out.iter_mut().enumerate().take(self.n_agents) {
            *slot = self.action_of(state, joint, k);
        }
    }

    pub fn transition(&self, state: usize, joint: usize) -> &[(usize, f64)] {
        &self.transitions[state][joint]
    }

    pub fn reward(&self, state: usize, joint: usize) -> &[f64] {
        &self.rewards[state][joint]
    }

    /// Largest absolute single-stage reward over all agents, states and joint actions.
    pub fn max_abs_reward(&self) -> f64 {
        self.rewards
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |m, r| m.max(r.abs()))
    }

    /// `R_max / (1 - β)`, the bound on any policy value.
    pub fn value_bound(&self) -> f64 {
        self.max_abs_reward() / (1.0 - self.discount)
    }

    /// Copy of this game with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.n_agents,
            discount,
            self.action_counts.clone(),
            self.transitions.clone(),
            self.rewards.clone(),
        )
    }

    /// Probability of every joint action in `state` under `policy`, optionally
    /// leaving one agent's factor out (treating it as 1).
    pub(crate) fn joint_weights(
        &self,
        state: usize,
        policy: &PolicyProfile,
        exclude: Option<usize>,
    ) -> Vec<f64> {
        let mut weights = Vec::with_capacity(self.joint_counts[state]);
        weights.push(1.0);
        for agent in 0..self.n_agents {
            let n = self.action_counts[state][agent];
            let mut next = Vec::with_capacity(weights.len() * n);
            if exclude == Some(agent) {
                for &w in &weights {
                    next.extend(std::iter::repeat_n(w, n));
                }
            } else {
                let row = policy.row(agent, state);
                for &w in &weights {
                    next.extend(row.iter().map(|p| w * p));
                }
            }
            weights = next;
        }
        weights
    }

    /// `r^j(x,a) + β Σ_y p(y|x,a) v^j(y)` for a single agent.
    pub(crate) fn backup(&self, state: usize, joint: usize, agent: usize, values: &ValueProfile) -> f64 {
        let v = values.agent(agent);
        let future: f64 = self.transitions[state][joint]
            .iter()
            .map(|&(y, p)| p * v[y])
            .sum();
        self.rewards[state][joint][agent] + self.discount * future
    }

    /// Per-state backups for every joint action and agent: `[joint][agent]`.
    pub(crate) fn state_backups(&self, state: usize, values: &ValueProfile) -> Vec<Vec<f64>> {
        (0..self.joint_counts[state])
            .map(|j| {
                let mut out = self.rewards[state][j].clone();
                for &(y, p) in &self.transitions[state][j] {
                    for (agent, o) in out.iter_mut().enumerate() {
                        *o += self.discount * p * values.get(agent, y);
                    }
                }
                out
            })
            .collect()
    }

    /// Checks that `policy` has one row per (agent, state) of the right length.
    pub fn check_policy_shape(&self, policy: &PolicyProfile) -> Result<()> {
        if policy.n_agents() != self.n_agents {
            return structure(format!(
                "policy covers {} agents, game has {}",
                policy.n_agents(),
                self.n_agents
            ));
        }
        for agent in 0..self.n_agents {
            if policy.probs[agent].len() != self.n_states() {
                return structure(format!(
                    "policy for agent {agent} covers {} states, game has {}",
                    policy.probs[agent].len(),
                    self.n_states()
                ));
            }
            for x in 0..self.n_states() {
                let got = policy.probs[agent][x].len();
                let want = self.action_counts[x][agent];
                if got != want {
                    return structure(format!(
                        "policy row (agent {agent}, state {x}) has {got} entries, expected {want}"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn check_value_shape(&self, values: &ValueProfile) -> Result<()> {
        if values.n_agents() != self.n_agents {
            return structure(format!(
                "value profile covers {} agents, game has {}",
                values.n_agents(),
                self.n_agents
            ));
        }
        if values.values.iter().any(|v| v.len() != self.n_states()) {
            return structure("value profile state count differs from game");
        }
        Ok(())
    }

    /// Checks shape and that every row is a distribution within `tol`.
    pub fn check_policy(&self, policy: &PolicyProfile, tol: f64) -> Result<()> {
        self.check_policy_shape(policy)?;
        if let Some((agent, state)) = policy.first_invalid_row(tol) {
            return structure(format!(
                "policy row (agent {agent}, state {state}) is not a distribution: {:?}",
                policy.row(agent, state)
            ));
        }
        Ok(())
    }

    /// Markov chain and per-agent expected rewards induced by `policy`.
    pub fn induced_chain(&self, policy: &PolicyProfile) -> Result<InducedChain> {
        self.check_policy_shape(policy)?;
        let n = self.n_states();
        let mut transition = vec![vec![0.0; n]; n];
        let mut rewards = vec![vec![0.0; n]; self.n_agents];
        for x in 0..n {
            let weights = self.joint_weights(x, policy, None);
            for (j, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for &(y, p) in &self.transitions[x][j] {
                    transition[x][y] += w * p;
                }
                for (agent, r) in self.rewards[x][j].iter().enumerate() {
                    rewards[agent][x] += w * r;
                }
            }
        }
        Ok(InducedChain { transition, rewards })
    }

    /// Policy values solving `(I - β P_π) v^i = R^i_π` for every agent.
    pub fn exact_value(&self, policy: &PolicyProfile) -> Result<ValueProfile> {
        let chain = self.induced_chain(policy)?;
        let n = self.n_states();
        let beta = self.discount;
        let system = DMatrix::from_fn(n, n, |x, y| {
            let id = if x == y { 1.0 } else { 0.0 };
            id - beta * chain.transition[x][y]
        });
        let lu = system.clone().lu();
        let mut values = Vec::with_capacity(self.n_agents);
        for agent in 0..self.n_agents {
            let rhs = DVector::from_column_slice(&chain.rewards[agent]);
            let sol = lu.solve(&rhs).ok_or_else(|| {
                SgspError::Numerical(format!("singular policy-evaluation system for agent {agent}"))
            })?;
            let residual = (&system * &sol - &rhs).amax();
            let scale = rhs.amax().max(1.0) / (1.0 - beta);
            if !(residual <= 1e-10 * scale) {
                return Err(SgspError::Numerical(format!(
                    "policy-evaluation residual {residual:e} for agent {agent}"
                )));
            }
            values.push(sol.iter().copied().collect());
        }
        Ok(ValueProfile { values })
    }

    /// `Q^i_{π^{-i}}(x, a^i)`: agent `agent`'s expected one-step backup of
    /// `action` with the other agents mixing according to `policy`.
    pub fn q_value(
        &self,
        values: &ValueProfile,
        policy: &PolicyProfile,
        agent: usize,
        state: usize,
        action: usize,
    ) -> Result<f64> {
        self.check_entry(values, policy, agent, state, action)?;
        Ok(self.conditional_backup(values, policy, agent, state, action, agent))
    }

    /// Bellman error `g^i_{x,a^i} = Q^i_{π^{-i}}(x,a^i) - v^i(x)`.
    pub fn bellman_error(
        &self,
        values: &ValueProfile,
        policy: &PolicyProfile,
        agent: usize,
        state: usize,
        action: usize,
    ) -> Result<f64> {
        Ok(self.q_value(values, policy, agent, state, action)? - values.get(agent, state))
    }

    /// Backup of `reward_agent` conditioned on `agent` playing `action`,
    /// marginalized over every other agent.
    pub(crate) fn conditional_backup(
        &self,
        values: &ValueProfile,
        policy: &PolicyProfile,
        agent: usize,
        state: usize,
        action: usize,
        reward_agent: usize,
    ) -> f64 {
        let weights = self.joint_weights(state, policy, Some(agent));
        weights
            .iter()
            .enumerate()
            .filter(|&(j, &w)| w != 0.0 && self.action_of(state, j, agent) == action)
            .map(|(j, &w)| w * self.backup(state, j, reward_agent, values))
            .sum()
    }

    fn check_entry(
        &self,
        values: &ValueProfile,
        policy: &PolicyProfile,
        agent: usize,
        state: usize,
        action: usize,
    ) -> Result<()> {
        self.check_policy_shape(policy)?;
        self.check_value_shape(values)?;
        if agent >= self.n_agents || state >= self.n_states() {
            return structure(format!("agent {agent} / state {state} out of range"));
        }
        if action >= self.action_counts[state][agent] {
            return structure(format!(
                "action {action} infeasible for agent {agent} in state {state}"
            ));
        }
        Ok(())
    }

    /// Draws the next state for `actions` played in `state`; rewards are
    /// returned exactly.
    pub fn sample_step<R: Rng + ?Sized>(
        &self,
        state: usize,
        actions: &[usize],
        rng: &mut R,
    ) -> Result<(usize, Vec<f64>)> {
        let joint = self.joint_index(state, actions)?;
        Ok((self.sample_next(state, joint, rng), self.rewards[state][joint].clone()))
    }

    pub(crate) fn sample_next<R: Rng + ?Sized>(&self, state: usize, joint: usize, rng: &mut R) -> usize {
        let row = &self.transitions[state][joint];
        if row.len() == 1 {
            return row[0].0;
        }
        let probs: Vec<f64> = row.iter().map(|&(_, p)| p).collect();
        row[sample_index(&probs, rng)].0
    }

    pub fn to_document(&self) -> GameDocument {
        GameDocument {
            n_agents: self.n_agents,
            states: self.n_states(),
            actions: self.action_counts.clone(),
            discount: self.discount,
            transitions: self.transitions.clone(),
            rewards: self.rewards.clone(),
        }
    }

    pub fn from_document(doc: GameDocument) -> Result<Self> {
        if doc.actions.len() != doc.states {
            return structure(format!(
                "document declares {} states but lists actions for {}",
                doc.states,
                doc.actions.len()
            ));
        }
        let mut transitions = doc.transitions;
        for (x, rows) in transitions.iter_mut().enumerate() {
            for (j, row) in rows.iter_mut().enumerate() {
                let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                let dev = (sum - 1.0).abs();
                if dev > LOADER_RENORMALIZE_TOL {
                    return structure(format!(
                        "state {x}, joint {j}: transition row sums to {sum}, deviation {dev:e} too large to renormalize"
                    ));
                }
                if dev > ROW_SUM_TOL {
                    for entry in row.iter_mut() {
                        entry.1 /= sum;
                    }
                }
            }
        }
        Self::new(doc.n_agents, doc.discount, doc.actions, transitions, doc.rewards)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// On-disk representation of a [`StochasticGame`].
///
/// `actions[x][i]` is the number of actions of agent `i` in state `x`;
/// `transitions[x][a]` lists `[next_state, probability]` pairs and
/// `rewards[x][a]` the reward vector, both keyed by joint-action index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameDocument {
    pub n_agents: usize,
    pub states: usize,
    pub actions: Vec<Vec<usize>>,
    pub discount: f64,
    pub transitions: Vec<Vec<TransitionRow>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct InducedChain {
    /// `P_π[x][y]`
    pub transition: Vec<Vec<f64>>,
    /// `R_π[agent][x]`
    pub rewards: Vec<Vec<f64>>,
}

/// Per-agent, per-state distributions over each agent's own actions,
/// stored as `[agent][state][action]`.
///
/// Rows are not required to be valid distributions; feasibility checks
/// deliberately accept arbitrary reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyProfile {
    probs: Vec<Vec<Vec<f64>>>,
}

impl PolicyProfile {
    pub fn from_rows(probs: Vec<Vec<Vec<f64>>>) -> Self {
        Self { probs }
    }

    pub fn uniform(game: &StochasticGame) -> Self {
        let probs = (0..game.n_agents())
            .map(|agent| {
                (0..game.n_states())
                    .map(|x| {
                        let n = game.n_actions(x, agent);
                        vec![1.0 / n as f64; n]
                    })
                    .collect()
            })
            .collect();
        Self { probs }
    }

    /// Deterministic profile picking `choose(agent, state)` everywhere.
    pub fn deterministic(game: &StochasticGame, choose: impl Fn(usize, usize) -> usize) -> Self {
        let probs = (0..game.n_agents())
            .map(|agent| {
                (0..game.n_states())
                    .map(|x| {
                        let mut row = vec![0.0; game.n_actions(x, agent)];
                        row[choose(agent, x)] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        Self { probs }
    }

    pub fn n_agents(&self) -> usize {
        self.probs.len()
    }

    pub fn n_states(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    pub fn prob(&self, agent: usize, state: usize, action: usize) -> f64 {
        self.probs[agent][state][action]
    }

    pub fn set(&mut self, agent: usize, state: usize, action: usize, p: f64) {
        self.probs[agent][state][action] = p;
    }

    pub fn row(&self, agent: usize, state: usize) -> &[f64] {
        &self.probs[agent][state]
    }

    pub fn row_mut(&mut self, agent: usize, state: usize) -> &mut Vec<f64> {
        &mut self.probs[agent][state]
    }

    pub fn agent_rows(&self, agent: usize) -> &[Vec<f64>] {
        &self.probs[agent]
    }

    pub fn rows(&self) -> &[Vec<Vec<f64>>] {
        &self.probs
    }

    pub fn into_rows(self) -> Vec<Vec<Vec<f64>>> {
        self.probs
    }

    /// First `(agent, state)` whose row is not a distribution within `tol`.
    pub fn first_invalid_row(&self, tol: f64) -> Option<(usize, usize)> {
        for (agent, rows) in self.probs.iter().enumerate() {
            for (x, row) in rows.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                let bad_entry = row.iter().any(|&p| !(-tol..=1.0 + tol).contains(&p));
                if bad_entry || (sum - 1.0).abs() > tol {
                    return Some((agent, x));
                }
            }
        }
        None
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.first_invalid_row(tol).is_none()
    }

    /// Largest absolute coordinate difference to `other` (same shape assumed).
    pub fn max_abs_diff(&self, other: &PolicyProfile) -> f64 {
        self.probs
            .iter()
            .flatten()
            .flatten()
            .zip(other.probs.iter().flatten().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Per-agent, per-state value estimates stored as `[agent][state]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueProfile {
    values: Vec<Vec<f64>>,
}

impl ValueProfile {
    pub fn from_rows(values: Vec<Vec<f64>>) -> Self {
        Self { values }
    }

    pub fn zeros(n_agents: usize, n_states: usize) -> Self {
        Self::constant(n_agents, n_states, 0.0)
    }

    pub fn constant(n_agents: usize, n_states: usize, value: f64) -> Self {
        Self {
            values: vec![vec![value; n_states]; n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.values.len()
    }

    pub fn n_states(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn get(&self, agent: usize, state: usize) -> f64 {
        self.values[agent][state]
    }

    pub fn set(&mut self, agent: usize, state: usize, value: f64) {
        self.values[agent][state] = value;
    }

    pub fn agent(&self, agent: usize) -> &[f64] {
        &self.values[agent]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &ValueProfile) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::random::random_game;

    fn two_state_game() -> StochasticGame {
        // one agent with two actions in each state
        StochasticGame::new(
            1,
            0.5,
            vec![vec![2], vec![2]],
            vec![
                vec![vec![(0, 1.0)], vec![(1, 1.0)]],
                vec![vec![(0, 0.25), (1, 0.75)], vec![(1, 1.0)]],
            ],
            vec![vec![vec![1.0], vec![0.0]], vec![vec![2.0], vec![-1.0]]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_discount_and_rows() {
        let g = two_state_game();
        assert!(g.with_discount(1.0).is_err());
        assert!(g.with_discount(0.0).is_err());
        let bad = StochasticGame::new(
            1,
            0.5,
            vec![vec![1]],
            vec![vec![vec![(0, 0.9)]]],
            vec![vec![vec![0.0]]],
        );
        assert!(matches!(bad, Err(SgspError::Structure(_))));
        let no_actions = StochasticGame::new(1, 0.5, vec![vec![0]], vec![vec![]], vec![vec![]]);
        assert!(no_actions.is_err());
    }

    #[test]
    fn joint_index_is_row_major() {
        let game = random_game(&mut seeded(1), 2, 2, &[2, 3]);
        assert_eq!(game.joint_index(0, &[1, 2]).unwrap(), 5);
        let mut out = [0; 2];
        game.decode_joint(0, 5, &mut out);
        assert_eq!(out, [1, 2]);
        assert!(game.joint_index(0, &[2, 0]).is_err());
    }

    #[test]
    fn deterministic_policy_selects_transition_row() {
        let game = two_state_game();
        let pi = PolicyProfile::deterministic(&game, |_, x| if x == 0 { 1 } else { 0 });
        let chain = game.induced_chain(&pi).unwrap();
        assert_eq!(chain.transition[0], vec![0.0, 1.0]);
        assert_eq!(chain.transition[1], vec![0.25, 0.75]);
        assert_eq!(chain.rewards[0], vec![0.0, 2.0]);
    }

    #[test]
    fn single_state_chain_is_identity() {
        let mut rng = seeded(3);
        let game = random_game(&mut rng, 2, 1, &[3, 2]);
        let pi = PolicyProfile::uniform(&game);
        let chain = game.induced_chain(&pi).unwrap();
        assert!((chain.transition[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let game = two_state_game();
        let pi = PolicyProfile::from_rows(vec![vec![vec![1.0]]]);
        assert!(matches!(game.induced_chain(&pi), Err(SgspError::Structure(_))));
        assert!(game.exact_value(&pi).is_err());
    }

    #[test]
    fn exact_value_solves_linear_system() {
        let game = two_state_game();
        let pi = PolicyProfile::deterministic(&game, |_, _| 0);
        let v = game.exact_value(&pi).unwrap();
        // state 0 self-loops with reward 1: v = 1/(1-0.5) = 2
        assert!((v.get(0, 0) - 2.0).abs() < 1e-12);
        // state 1: v1 = 2 + 0.5(0.25*2 + 0.75 v1) => v1 = 2.25/0.625
        assert!((v.get(0, 1) - 2.25 / 0.625).abs() < 1e-12);
    }

    #[test]
    fn tiny_discount_returns_stage_rewards() {
        let mut rng = seeded(11);
        let game = random_game(&mut rng, 2, 3, &[2, 2]).with_discount(f64::MIN_POSITIVE).unwrap();
        let pi = PolicyProfile::uniform(&game);
        let v = game.exact_value(&pi).unwrap();
        let chain = game.induced_chain(&pi).unwrap();
        for agent in 0..2 {
            for x in 0..3 {
                assert_eq!(v.get(agent, x), chain.rewards[agent][x]);
            }
        }
    }

    #[test]
    fn single_agent_q_value_has_no_opponent_product() {
        let game = two_state_game();
        let pi = PolicyProfile::uniform(&game);
        let v = ValueProfile::from_rows(vec![vec![3.0, -1.0]]);
        let q = game.q_value(&v, &pi, 0, 1, 0).unwrap();
        assert!((q - (2.0 + 0.5 * (0.25 * 3.0 + 0.75 * -1.0))).abs() < 1e-15);
        assert!(game.q_value(&v, &pi, 0, 1, 2).is_err());
    }

    #[test]
    fn constant_rewards_with_zero_values_give_constant_error() {
        let c = 0.7;
        let game = StochasticGame::new(
            2,
            0.9,
            vec![vec![2, 2]; 2],
            vec![vec![vec![(1, 0.5), (0, 0.5)]; 4]; 2],
            vec![vec![vec![c, c]; 4]; 2],
        )
        .unwrap();
        let pi = PolicyProfile::uniform(&game);
        let v = ValueProfile::zeros(2, 2);
        for agent in 0..2 {
            for x in 0..2 {
                for a in 0..2 {
                    assert!((game.bellman_error(&v, &pi, agent, x, a).unwrap() - c).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn sample_step_follows_deterministic_rows_and_replays() {
        let game = two_state_game();
        let mut rng = seeded(5);
        for _ in 0..20 {
            let (y, r) = game.sample_step(0, &[1], &mut rng).unwrap();
            assert_eq!((y, r), (1, vec![0.0]));
        }
        let run = |seed| {
            let mut rng = seeded(seed);
            let mut x = 1;
            (0..50)
                .map(|_| {
                    let (y, r) = game.sample_step(x, &[0], &mut rng).unwrap();
                    x = y;
                    (y, r[0].to_bits())
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert!(game.sample_step(0, &[2], &mut rng).is_err());
    }

    #[test]
    fn sample_step_frequencies_match_kernel() {
        let game = two_state_game();
        let mut rng = seeded(77);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| game.sample_step(1, &[0], &mut rng).unwrap().0 == 0)
            .count();
        let p = 0.25;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn loader_renormalizes_small_deviation_only() {
        let game = two_state_game();
        let mut doc = game.to_document();
        doc.transitions[1][0] = vec![(0, 0.25 + 5e-10), (1, 0.75)];
        let loaded = StochasticGame::from_document(doc.clone()).unwrap();
        let sum: f64 = loaded.transition(1, 0).iter().map(|e| e.1).sum();
        assert!((sum - 1.0).abs() < 1e-15);
        doc.transitions[1][0] = vec![(0, 0.25 + 1e-6), (1, 0.75)];
        assert!(StochasticGame::from_document(doc).is_err());
    }

    #[test]
    fn json_round_trip() {
        let game = random_game(&mut seeded(2), 2, 3, &[2, 3]);
        let back = StochasticGame::from_json(&game.to_json().unwrap()).unwrap();
        assert_eq!(game, back);
    }
}

//! Benchmark games and the sampled-interaction interface used by the
//! model-free learners.

mod hart;
mod stg;

pub use hart::{build_hart_game, hart_payoffs, hart_reference_equilibria, HART_MIXED_NE, HART_PURE_NE};
pub use stg::{avg_distance, DeltaStg, Stg, MAX_TABLE_SIDE, MOVES};

use crate::error::Result;
use crate::game::StochasticGame;
use crate::rng::SimRng;

/// A generative model that learners interact with one step at a time.
///
/// The environment keeps a true state; learners only see `observe(state)` and
/// choose actions indexed within the action set of that observation.
pub trait Environment: Sync {
    fn n_agents(&self) -> usize;
    fn n_observations(&self) -> usize;
    fn n_actions(&self, observation: usize, agent: usize) -> usize;
    fn discount(&self) -> f64;
    fn initial_state(&self, rng: &mut SimRng) -> usize;
    fn observe(&self, state: usize) -> usize;
    /// Advances from `state` under `actions`, writing the reward vector into
    /// `rewards` and returning the next true state.
    fn step(&self, state: usize, actions: &[usize], rng: &mut SimRng, rewards: &mut [f64]) -> Result<usize>;
    /// Inter-agent distance metric, for environments that define one.
    fn distance(&self, _state: usize) -> Option<f64> {
        None
    }
}

impl Environment for StochasticGame {
    fn n_agents(&self) -> usize {
        StochasticGame::n_agents(self)
    }

    fn n_observations(&self) -> usize {
        self.n_states()
    }

    fn n_actions(&self, observation: usize, agent: usize) -> usize {
        StochasticGame::n_actions(self, observation, agent)
    }

    fn discount(&self) -> f64 {
        StochasticGame::discount(self)
    }

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        use rand::Rng;
        rng.gen_range(0..self.n_states())
    }

    fn observe(&self, state: usize) -> usize {
        state
    }

    fn step(&self, state: usize, actions: &[usize], rng: &mut SimRng, rewards: &mut [f64]) -> Result<usize> {
        let joint = self.joint_index(state, actions)?;
        rewards.copy_from_slice(self.reward(state, joint));
        Ok(self.sample_next(state, joint, rng))
    }
}

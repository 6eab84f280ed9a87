//! Random instances for property tests and benchmarks.

use rand::Rng;

use crate::game::{PolicyProfile, StochasticGame, ValueProfile};

/// Random game with the same action counts in every state, dense random
/// transition rows and rewards uniform in `[-1, 1]`.
pub fn random_game<R: Rng + ?Sized>(
    rng: &mut R,
    n_agents: usize,
    n_states: usize,
    actions: &[usize],
) -> StochasticGame {
    assert_eq!(actions.len(), n_agents);
    let discount = rng.gen_range(0.5..0.95);
    let joint: usize = actions.iter().product();
    let action_counts = vec![actions.to_vec(); n_states];
    let transitions = (0..n_states)
        .map(|_| (0..joint).map(|_| random_row(rng, n_states)).collect())
        .collect();
    let rewards = (0..n_states)
        .map(|_| {
            (0..joint)
                .map(|_| (0..n_agents).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    StochasticGame::new(n_agents, discount, action_counts, transitions, rewards)
        .expect("random game is well formed")
}

fn random_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<(usize, f64)> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut row: Vec<(usize, f64)> = w.iter().enumerate().map(|(y, v)| (y, v / total)).collect();
    // pin the sum to exactly one within rounding
    let rest: f64 = row[..n - 1].iter().map(|e| e.1).sum();
    row[n - 1].1 = 1.0 - rest;
    row
}

/// Strictly positive random distribution for every (agent, state).
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, game: &StochasticGame) -> PolicyProfile {
    let rows = (0..game.n_agents())
        .map(|agent| {
            (0..game.n_states())
                .map(|x| random_distribution(rng, game.n_actions(x, agent)))
                .collect()
        })
        .collect();
    PolicyProfile::from_rows(rows)
}

pub fn random_distribution<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

pub fn random_values<R: Rng + ?Sized>(rng: &mut R, game: &StochasticGame, scale: f64) -> ValueProfile {
    ValueProfile::from_rows(
        (0..game.n_agents())
            .map(|_| (0..game.n_states()).map(|_| rng.gen_range(-scale..scale)).collect())
            .collect(),
    )
}

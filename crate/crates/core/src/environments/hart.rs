use crate::error::Result;
use crate::game::StochasticGame;

/// Pure equilibrium: both players pick the third action.
pub const HART_PURE_NE: [f64; 3] = [0.0, 0.0, 1.0];
/// Mixed equilibrium: both players split evenly between the first two actions.
pub const HART_MIXED_NE: [f64; 3] = [0.5, 0.5, 0.0];

/// Stage payoffs `(player 1, player 2)` indexed `[row action][column action]`.
pub fn hart_payoffs() -> [[(f64, f64); 3]; 3] {
    [
        [(1.0, 0.0), (0.0, 1.0), (1.0, 0.0)],
        [(0.0, 1.0), (1.0, 0.0), (1.0, 0.0)],
        [(0.0, 1.0), (0.0, 1.0), (1.0, 1.0)],
    ]
}

/// Single-state, two-player, non-generic game with one pure and one mixed
/// stationary equilibrium.
pub fn build_hart_game(discount: f64) -> Result<StochasticGame> {
    let payoffs = hart_payoffs();
    let mut rewards = Vec::with_capacity(9);
    for row in payoffs.iter() {
        for &(r1, r2) in row.iter() {
            rewards.push(vec![r1, r2]);
        }
    }
    StochasticGame::new(2, discount, vec![vec![3, 3]], vec![vec![vec![(0, 1.0)]; 9]], vec![rewards])
}

/// Labelled reference equilibria (same strategy for both players).
pub fn hart_reference_equilibria() -> Vec<(String, Vec<Vec<f64>>)> {
    vec![
        ("mixed (0.5,0.5,0)".to_string(), vec![HART_MIXED_NE.to_vec(); 2]),
        ("pure (0,0,1)".to_string(), vec![HART_PURE_NE.to_vec(); 2]),
    ]
}

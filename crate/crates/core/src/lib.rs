//! Solvers and verification tools for stationary Nash equilibria of finite
//! discounted general-sum stochastic games.
//!
//! The model-based solver ([`off_sgsp`]) and the decentralized model-free
//! solver ([`on_sgsp`]) both run a fast critic that evaluates the current
//! strategy profile and a slow actor that moves each policy coordinate along
//! `-(π)^{α'} |g| bsgn(∂f/∂π)`, where `g` is the Bellman error and `f` the
//! aggregate objective of [`equilibrium`]. [`oracle`] provides independent
//! brute-force checks, [`baselines`] the NashQ and Friend-Q comparisons and
//! [`harness`] the experiment runner behind the `sgsp` command line tool.

pub mod error;
pub mod game;
pub mod equilibrium;
pub mod random;
pub mod oracle;
pub mod environments;
pub mod schedule;
pub mod trace;
pub mod off_sgsp;
pub mod selfplay;
pub mod on_sgsp;
pub mod baselines;
pub mod harness;
pub mod rng;

pub use error::{Result, SgspError};
pub use game::{PolicyProfile, StochasticGame, ValueProfile};

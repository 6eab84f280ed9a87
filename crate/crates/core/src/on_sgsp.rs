//! Decentralized model-free self-play.
//!
//! Every agent keeps TD value estimates for all agents, a gradient estimate
//! `ξ^i(x, a^i)` and its own policy rows. Agents only ever see the broadcast
//! [`Transition`]; nothing else is shared between them.

use rand::Rng;

use crate::environments::Environment;
use crate::equilibrium::{powf_prob, project_simplex_in_place, Bsgn};
use crate::error::{Result, SgspError};
use crate::game::{PolicyProfile, ValueProfile};
use crate::rng::SimRng;
use crate::schedule::{SgspConfig, StepClock};
use crate::selfplay::{run_selfplay, JointLearner, SelfPlayDriver, SelfPlayOutcome};
pub use crate::selfplay::Transition;
use crate::trace::{RunTrace, TraceMeta};

#[derive(Debug, Clone)]
pub struct AgentLearner {
    agent: usize,
    discount: f64,
    sign: Bsgn,
    alpha_prime: f64,
    /// `[j][x]`: this agent's estimate of every agent's value.
    values: Vec<Vec<f64>>,
    /// `[x][a]`
    xi: Vec<Vec<f64>>,
    /// `[x][a]`
    policy: Vec<Vec<f64>>,
    state_visits: Vec<u64>,
    pair_visits: Vec<Vec<u64>>,
}

impl AgentLearner {
    /// Zero values and gradient estimates, uniform policy.
    pub fn new<E: Environment + ?Sized>(env: &E, agent: usize, config: &SgspConfig) -> Result<Self> {
        config.validate()?;
        if agent >= env.n_agents() {
            return Err(SgspError::Structure(format!("agent {agent} out of range")));
        }
        let n_obs = env.n_observations();
        let sizes: Vec<usize> = (0..n_obs).map(|x| env.n_actions(x, agent)).collect();
        Ok(Self {
            agent,
            discount: env.discount(),
            sign: config.bsgn()?,
            alpha_prime: config.alpha_prime,
            values: vec![vec![0.0; n_obs]; env.n_agents()],
            xi: sizes.iter().map(|&m| vec![0.0; m]).collect(),
            policy: sizes.iter().map(|&m| vec![1.0 / m as f64; m]).collect(),
            state_visits: vec![0; n_obs],
            pair_visits: sizes.iter().map(|&m| vec![0; m]).collect(),
        })
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn policy_rows(&self) -> &[Vec<f64>] {
        &self.policy
    }

    pub fn set_policy_row(&mut self, state: usize, row: Vec<f64>) -> Result<()> {
        if row.len() != self.policy[state].len() {
            return Err(SgspError::Structure(format!("policy row length {} for state {state}", row.len())));
        }
        self.policy[state] = row;
        Ok(())
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn xi(&self) -> &[Vec<f64>] {
        &self.xi
    }

    pub fn state_visits(&self) -> &[u64] {
        &self.state_visits
    }

    pub fn pair_visits(&self) -> &[Vec<u64>] {
        &self.pair_visits
    }

    /// Draws an own action from `π^i(x)`, or from its δ-offset version when
    /// `delta > 0`.
    pub fn act(&self, state: usize, rng: &mut SimRng, delta: f64) -> usize {
        let row = &self.policy[state];
        let total = 1.0 + delta * row.len() as f64;
        let u = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (a, &p) in row.iter().enumerate() {
            let w = p + delta;
            if w > 0.0 {
                acc += w;
                last = a;
                if u < acc {
                    return a;
                }
            }
        }
        last
    }

    /// Value, gradient-estimate and policy updates for one observed transition.
    pub fn observe(&mut self, tr: &Transition<'_>, policy_step: f64, value_step: f64) -> Result<()> {
        let (x, y) = (tr.state, tr.next);
        let own = tr.actions[self.agent];
        let mut td_sum = 0.0;
        let mut own_td = 0.0;
        for (j, vj) in self.values.iter_mut().enumerate() {
            let td = tr.rewards[j] + self.discount * vj[y] - vj[x];
            vj[x] += value_step * td;
            td_sum += td;
            if j == self.agent {
                own_td = td;
            }
        }
        let xi = &mut self.xi[x][own];
        *xi += value_step * (td_sum - *xi);
        let xi_new = *xi;
        self.state_visits[x] += 1;
        self.pair_visits[x][own] += 1;
        if !td_sum.is_finite() || !xi_new.is_finite() {
            return Err(SgspError::Numerical(format!(
                "agent {}: non-finite estimate at state {x} (TD sum {td_sum}, xi {xi_new})",
                self.agent
            )));
        }
        let row = &mut self.policy[x];
        let p = row[own];
        if p > 0.0 && policy_step > 0.0 {
            row[own] = p - policy_step * powf_prob(p, self.alpha_prime) * own_td.abs() * self.sign.apply(-xi_new);
            project_simplex_in_place(row);
        }
        Ok(())
    }
}

/// All agents of one self-play run. Agents share nothing but the broadcast
/// transition; exploration windows follow the global step counter and the
/// step sizes follow [`SgspConfig::step_clock`].
#[derive(Debug, Clone)]
pub struct SgspTeam {
    agents: Vec<AgentLearner>,
    config: SgspConfig,
}

impl SgspTeam {
    pub fn new<E: Environment + ?Sized>(env: &E, config: SgspConfig) -> Result<Self> {
        let agents = (0..env.n_agents())
            .map(|i| AgentLearner::new(env, i, &config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { agents, config })
    }

    pub fn agents(&self) -> &[AgentLearner] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentLearner] {
        &mut self.agents
    }

    pub fn config(&self) -> &SgspConfig {
        &self.config
    }

    /// Each agent's estimate of its own value.
    pub fn own_values(&self) -> ValueProfile {
        ValueProfile::from_rows(self.agents.iter().map(|a| a.values[a.agent].clone()).collect())
    }
}

impl JointLearner for SgspTeam {
    fn act(&mut self, state: usize, step: u64, rng: &mut SimRng, actions: &mut [usize]) {
        let delta = if self.config.in_perturbation_window(step) {
            self.config.perturb_delta
        } else {
            0.0
        };
        for (a, learner) in actions.iter_mut().zip(&self.agents) {
            *a = learner.act(state, rng, delta);
        }
    }

    fn observe(&mut self, tr: &Transition<'_>, step: u64) -> Result<()> {
        // schedules are indexed from 1
        for learner in &mut self.agents {
            let n = match self.config.step_clock {
                StepClock::Global => step + 1,
                StepClock::StateVisits => learner.state_visits[tr.state] + 1,
            };
            learner.observe(tr, self.config.policy_step.at(n), self.config.value_step.at(n))?;
        }
        Ok(())
    }

    fn policy_row(&mut self, agent: usize, state: usize) -> Vec<f64> {
        self.agents[agent].policy[state].clone()
    }
}

pub type SgspDriver<'e, E> = SelfPlayDriver<'e, E, SgspTeam>;

pub fn sgsp_driver<E: Environment + ?Sized>(env: &E, config: SgspConfig, rng: SimRng) -> Result<SgspDriver<'_, E>> {
    let every = config.snapshot_every;
    Ok(SelfPlayDriver::new(env, SgspTeam::new(env, config)?, rng, every))
}

#[derive(Debug, Clone)]
pub struct OnSgspOutcome {
    pub policy: PolicyProfile,
    /// Each agent's own-value estimate.
    pub values: ValueProfile,
    pub trace: RunTrace,
}

/// Runs ON-SGSP self-play for `config.max_iters` steps from a fresh start.
pub fn run_on_sgsp<E: Environment + ?Sized>(
    env: &E,
    config: &SgspConfig,
    rng: SimRng,
    meta: TraceMeta,
) -> Result<OnSgspOutcome> {
    let mut driver = sgsp_driver(env, config.clone(), rng)?;
    let SelfPlayOutcome { policy, mut trace } = run_selfplay(&mut driver, config.max_iters, meta)?;
    let values = driver.learner().own_values();
    trace.final_values = Some(values.clone());
    Ok(OnSgspOutcome { policy, values, trace })
}

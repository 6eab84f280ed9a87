//! Step-size schedules and solver configuration.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{Bsgn, DEFAULT_BSGN_WIDTH};
use crate::error::{Result, SgspError};

/// Step-size sequence indexed by the global iteration `n ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// The same step at every iteration.
    Constant { value: f64 },
    /// `warmup_value` for `n < warmup`, then `n^{-exponent}`.
    Power { warmup: u64, warmup_value: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn power(warmup: u64, warmup_value: f64, exponent: f64) -> Self {
        Self::Power {
            warmup,
            warmup_value,
            exponent,
        }
    }

    pub fn at(&self, n: u64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Power {
                warmup,
                warmup_value,
                exponent,
            } => {
                if n < warmup {
                    warmup_value
                } else if exponent == 1.0 {
                    1.0 / n.max(1) as f64
                } else {
                    (n.max(1) as f64).powf(-exponent)
                }
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Self::Constant { value } => value.is_finite() && (0.0..=1.0).contains(&value),
            Self::Power {
                warmup_value, exponent, ..
            } => warmup_value.is_finite() && warmup_value > 0.0 && warmup_value <= 1.0 && exponent > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SgspError::Config(format!("invalid {name} schedule: {self:?}")))
        }
    }

    /// Asymptotic exponent `p` with `step ~ n^{-p}`; constants have `p = 0`.
    fn decay(&self) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::Power { exponent, .. } => exponent,
        }
    }
}

/// Which schedule drives which timescale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timescales {
    /// Policy step `0.2 → 1/n`, value step `0.1 → n^{-0.75}`: the policy is
    /// the slow iterate.
    #[default]
    PolicySlow,
    /// Policy step `0.2 → n^{-0.75}`, value step `0.1 → 1/n`; the value
    /// iterate is then the slower one.
    Literal,
}

impl Timescales {
    pub fn schedules(self) -> (StepSchedule, StepSchedule) {
        match self {
            Self::PolicySlow => (StepSchedule::power(1000, 0.2, 1.0), StepSchedule::power(1000, 0.1, 0.75)),
            Self::Literal => (StepSchedule::power(1000, 0.2, 0.75), StepSchedule::power(1000, 0.1, 1.0)),
        }
    }
}

/// Index fed to the ON-SGSP step schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepClock {
    /// Global step counter, shared by every state.
    #[default]
    Global,
    /// Number of visits to the current observation, per agent.
    StateVisits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgspConfig {
    /// Iteration (OFF-SGSP) or step (ON-SGSP) budget.
    pub max_iters: u64,
    /// Slow timescale, `b(n)`.
    pub policy_step: StepSchedule,
    /// Fast timescale, `c(n)`.
    pub value_step: StepSchedule,
    pub nu: f64,
    pub alpha_prime: f64,
    pub perturb_period: u64,
    /// ON-SGSP only: number of steps at the start of each period during which
    /// actions are drawn from the δ-offset policy.
    pub perturb_window: u64,
    pub perturb_delta: f64,
    pub convergence_tol: f64,
    pub snapshot_every: u64,
    /// ON-SGSP only.
    pub step_clock: StepClock,
}

impl Default for SgspConfig {
    fn default() -> Self {
        Self::with_timescales(Timescales::PolicySlow)
    }
}

impl SgspConfig {
    pub fn with_timescales(timescales: Timescales) -> Self {
        let (policy_step, value_step) = timescales.schedules();
        Self {
            max_iters: 100_000,
            policy_step,
            value_step,
            nu: DEFAULT_BSGN_WIDTH,
            alpha_prime: 0.5,
            perturb_period: 1000,
            perturb_window: 100,
            perturb_delta: 0.05,
            convergence_tol: 0.05,
            snapshot_every: 100,
            step_clock: StepClock::Global,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy_step.validate("policy")?;
        self.value_step.validate("value")?;
        Bsgn::new(self.nu)?;
        crate::equilibrium::check_alpha(self.alpha_prime)?;
        if self.perturb_period == 0 || self.snapshot_every == 0 {
            return Err(SgspError::Config("perturbation period and snapshot interval must be positive".into()));
        }
        if self.perturb_window > self.perturb_period {
            return Err(SgspError::Config(format!(
                "perturbation window {} exceeds period {}",
                self.perturb_window, self.perturb_period
            )));
        }
        if !(self.perturb_delta >= 0.0) || !self.perturb_delta.is_finite() {
            return Err(SgspError::Config(format!("perturbation offset must be non-negative, got {}", self.perturb_delta)));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(SgspError::Config(format!("convergence tolerance must be positive, got {}", self.convergence_tol)));
        }
        Ok(())
    }

    pub fn bsgn(&self) -> Result<Bsgn> {
        Bsgn::new(self.nu)
    }

    /// Checks the two-timescale step conditions for the power family:
    /// both sums diverge, both squared sums converge and `b(n)/c(n) → 0`.
    /// Returns the list of violated conditions.
    pub fn timescale_violations(&self) -> Vec<String> {
        let (pb, pc) = (self.policy_step.decay(), self.value_step.decay());
        let mut out = Vec::new();
        for (name, p) in [("policy", pb), ("value", pc)] {
            if p > 1.0 {
                out.push(format!("{name} steps are summable (exponent {p} > 1)"));
            }
            if p <= 0.5 {
                out.push(format!("{name} squared steps diverge (exponent {p} <= 0.5)"));
            }
        }
        if pb <= pc {
            out.push(format!("policy/value step ratio does not vanish (exponents {pb} <= {pc})"));
        }
        out
    }

    pub fn in_perturbation_window(&self, n: u64) -> bool {
        self.perturb_delta > 0.0 && n % self.perturb_period < self.perturb_window
    }
}

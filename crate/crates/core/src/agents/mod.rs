//! The four hierarchical agents.
//!
//! A meta-controller picks a goal state; a controller picks `left`/`right`
//! until that goal is reached or the episode ends. The variants differ only in
//! how each level's critic target and policy objective are formed:
//!
//! | variant              | controller bonus        | meta bonus        |
//! |----------------------|-------------------------|-------------------|
//! | `Hdqn`               | none (ε-greedy, max-Q)  | none              |
//! | `EntropySac`         | `+α·H(π_ag)`            | `+α·H(π_g)`       |
//! | `MiSac`              | `−α·I(a;g|s)`           | `+α·H(π_g)`       |
//! | `AdversarialMiSac`   | `−α·I(a;g|s)`           | `+α·I(a;g|s)`     |

mod agent;
mod episode;
pub mod checkpoint;
mod gradsuite;
pub mod objectives;
mod replay;

pub use agent::{Agent, AgentStats, ControllerLosses, MetaLosses, Network};
pub use gradsuite::{gradient_suite, GradientReport, OBJECTIVES};
pub use episode::{run_episode, EpisodeResult, TraceStep};
pub use replay::ReplayBuffer;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Hdqn,
    EntropySac,
    MiSac,
    AdversarialMiSac,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Hdqn, Variant::EntropySac, Variant::MiSac, Variant::AdversarialMiSac];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hdqn => "hdqn",
            Variant::EntropySac => "entropy_sac",
            Variant::MiSac => "mi_sac",
            Variant::AdversarialMiSac => "adversarial_mi_sac",
        }
    }

    pub fn is_sac(self) -> bool {
        self != Variant::Hdqn
    }

    /// Whether the controller's bonus is the mutual-information penalty.
    pub fn controller_uses_mi(self) -> bool {
        matches!(self, Variant::MiSac | Variant::AdversarialMiSac)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// How the `E_π[Q]` term of a policy objective is differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reparam {
    /// Relaxed Gumbel-Softmax sample at temperature `tau_gumbel`.
    Gumbel,
    /// Closed-form expectation over the categorical.
    Exact,
}

impl FromStr for Reparam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gumbel" => Ok(Reparam::Gumbel),
            "exact" => Ok(Reparam::Exact),
            _ => Err(Error::Config(format!("unknown reparameterization {s:?}"))),
        }
    }
}

impl fmt::Display for Reparam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reparam::Gumbel => "gumbel",
            Reparam::Exact => "exact",
        })
    }
}

/// Linear annealing from `start` to `end` over `decay_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    /// Weight of every entropy / mutual-information bonus.
    pub alpha: f64,
    pub gamma: f64,
    pub tau_gumbel: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub updates_per_env_step: usize,
    pub controller_epsilon: EpsilonSchedule,
    pub meta_epsilon: EpsilonSchedule,
    pub hidden: Vec<usize>,
    /// Dropout rate on hidden layers of the SAC critics.
    pub dropout: f64,
    pub reparam: Reparam,
    /// Append the visited-top bit to every network input.
    pub observe_visited: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            gamma: 0.99,
            tau_gumbel: 0.3,
            learning_rate: 3e-4,
            batch_size: 64,
            buffer_capacity: 50_000,
            updates_per_env_step: 1,
            controller_epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 50_000 },
            meta_epsilon: EpsilonSchedule { start: 1.0, end: 0.1, decay_steps: 50_000 },
            hidden: vec![256, 256],
            dropout: 0.2,
            reparam: Reparam::Gumbel,
            observe_visited: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.tau_gumbel > 0.0) {
            return bad(format!("tau_gumbel must be > 0, got {}", self.tau_gumbel));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad(format!("batch_size {} must be in 1..=buffer_capacity ({})", self.batch_size, self.buffer_capacity));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be positive".into());
        }
        for (name, e) in [("controller", &self.controller_epsilon), ("meta", &self.meta_epsilon)] {
            if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
                return bad(format!("{name} epsilon must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// What an agent sees of the environment state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation {
    pub position: usize,
    /// Only meaningful when the agent observes the visited bit.
    pub visited: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerTransition {
    /// Goal index (into the agent's goal list).
    pub goal: usize,
    pub state: Observation,
    pub action: usize,
    pub internal_reward: f64,
    pub next_state: Observation,
    /// The episode reached its absorbing state.
    pub done: bool,
    pub goal_reached: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaTransition {
    pub state: Observation,
    pub goal: usize,
    /// Undiscounted external reward collected while the goal was active.
    pub external_return: f64,
    pub next_state: Observation,
    pub done: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("Adversarial-MI-SAC".parse::<Variant>().unwrap(), Variant::AdversarialMiSac);
        assert!("ppo".parse::<Variant>().is_err());
    }

    #[test]
    fn epsilon_anneals_linearly() {
        let e = EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 100 };
        assert_eq!(e.value(0), 1.0);
        assert!((e.value(50) - 0.525).abs() < 1e-12);
        assert_eq!(e.value(100), 0.05);
        assert_eq!(e.value(10_000), 0.05);
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let mut hp = Hyperparams::default();
        hp.alpha = -0.1;
        assert!(hp.validate().is_err());
        let mut hp = Hyperparams::default();
        hp.gamma = 0.0;
        assert!(hp.validate().is_err());
        let mut hp = Hyperparams::default();
        hp.tau_gumbel = 0.0;
        assert!(hp.validate().is_err());
        let mut hp = Hyperparams::default();
        hp.batch_size = hp.buffer_capacity + 1;
        assert!(hp.validate().is_err());
    }
}

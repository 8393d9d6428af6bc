//! The stochastic chain: `n_g` states, start at `s_2`, absorbing at `s_1`.
//!
//! `left` always moves down one state. `right` moves up with probability 0.5
//! (staying put at the top) and down otherwise. Entering `s_1` ends the
//! episode with reward 1.0 if `s_{n_g}` was visited on the way, 0.01 if not.

mod oracle;
mod tabular;

pub use oracle::{evaluate_policy, optimal_policy, optimal_return_oracle, optimal_values, AugmentedState, OracleSolution};
pub use tabular::{tabular_q_learning, TabularPolicy, TabularQConfig};

use rand::Rng;

use crate::error::{Error, Result};

pub const START_POSITION: usize = 2;
pub const GOAL_REWARD: f64 = 1.0;
pub const EARLY_EXIT_REWARD: f64 = 0.01;
/// Step cap as a multiple of `n_g`.
pub const DEFAULT_CAP_FACTOR: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Left = 0,
    Right = 1,
}

impl Action {
    pub const COUNT: usize = 2;

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => Action::Left,
            1 => Action::Right,
            _ => panic!("action index {i} out of range"),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvConfig {
    /// Number of states, which is also the number of goals.
    pub n_g: usize,
    pub max_episode_steps: usize,
}

impl EnvConfig {
    pub fn new(n_g: usize) -> Result<Self> {
        Self::with_cap(n_g, DEFAULT_CAP_FACTOR * n_g)
    }

    pub fn with_cap(n_g: usize, max_episode_steps: usize) -> Result<Self> {
        if n_g < 3 {
            return Err(Error::Config(format!("n_g must be at least 3, got {n_g}")));
        }
        if max_episode_steps < n_g {
            return Err(Error::Config(format!("step cap {max_episode_steps} is below n_g = {n_g}")));
        }
        Ok(Self { n_g, max_episode_steps })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EnvState {
    /// 1-based state index.
    pub position: usize,
    /// Whether `s_{n_g}` has been visited this episode.
    pub visited_goal: bool,
    pub steps: usize,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub done: bool,
    /// Ended by the step cap rather than by reaching `s_1`.
    pub truncated: bool,
    pub external_reward: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ChainEnv {
    config: EnvConfig,
}

impl ChainEnv {
    pub fn new(config: EnvConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&self) -> EnvState {
        EnvState {
            position: START_POSITION,
            visited_goal: self.config.n_g == START_POSITION,
            steps: 0,
            done: false,
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &EnvState, action: Action, rng: &mut R) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let n = self.config.n_g;
        if state.position < 2 || state.position > n {
            return Err(Error::Usage(format!("position {} outside 2..={n}", state.position)));
        }
        let position = match action {
            Action::Left => state.position - 1,
            Action::Right => {
                if rng.random::<f64>() < 0.5 {
                    (state.position + 1).min(n)
                } else {
                    state.position - 1
                }
            }
        };
        let visited_goal = state.visited_goal || position == n;
        let steps = state.steps + 1;
        let terminal = position == 1;
        let truncated = !terminal && steps >= self.config.max_episode_steps;
        let external_reward = if !terminal {
            0.0
        } else if visited_goal {
            GOAL_REWARD
        } else {
            EARLY_EXIT_REWARD
        };
        let done = terminal || truncated;
        Ok(StepOutcome {
            next_state: EnvState { position, visited_goal, steps, done },
            done,
            truncated,
            external_reward,
        })
    }
}

/// Internal reward channel: the controller earns 1 exactly when this holds.
pub fn goal_reached(state: &EnvState, goal: usize) -> bool {
    state.position == goal
}

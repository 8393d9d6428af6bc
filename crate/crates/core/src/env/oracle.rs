//! Exact expected episode reward on the augmented chain `(position, visited)`.
//!
//! Because the only reward is paid on absorption, the undiscounted value of a
//! transient state is the expected terminal reward. Values are computed by
//! successive approximation until the Bellman residual is below
//! [`RESIDUAL_TOL`]. The step cap is ignored here.

use super::{Action, EnvConfig, EARLY_EXIT_REWARD, GOAL_REWARD, START_POSITION};

const RESIDUAL_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AugmentedState {
    pub position: usize,
    pub visited: bool,
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    /// Value of each transient state, indexed by [`state_index`].
    pub values: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
}

impl OracleSolution {
    pub fn value(&self, n_g: usize, s: AugmentedState) -> f64 {
        self.values[state_index(n_g, s)]
    }

    pub fn start_value(&self, n_g: usize) -> f64 {
        self.value(n_g, AugmentedState { position: START_POSITION, visited: n_g == START_POSITION })
    }
}

/// Transient states are positions `2..=n_g`, each with both visited flags.
fn state_index(n_g: usize, s: AugmentedState) -> usize {
    (s.position - 2) + (n_g - 1) * s.visited as usize
}

fn num_states(n_g: usize) -> usize {
    2 * (n_g - 1)
}

fn state_at(n_g: usize, i: usize) -> AugmentedState {
    AugmentedState { position: 2 + i % (n_g - 1), visited: i >= n_g - 1 }
}

/// `(probability, next position)` branches of one action.
fn branches(n_g: usize, position: usize, action: Action) -> [(f64, usize); 2] {
    match action {
        Action::Left => [(1.0, position - 1), (0.0, position - 1)],
        Action::Right => [(0.5, (position + 1).min(n_g)), (0.5, position - 1)],
    }
}

fn action_value(n_g: usize, s: AugmentedState, action: Action, values: &[f64]) -> f64 {
    branches(n_g, s.position, action)
        .iter()
        .filter(|(p, _)| *p > 0.0)
        .map(|&(p, next)| {
            let visited = s.visited || next == n_g;
            let v = if next == 1 {
                if visited { GOAL_REWARD } else { EARLY_EXIT_REWARD }
            } else {
                values[state_index(n_g, AugmentedState { position: next, visited })]
            };
            p * v
        })
        .sum()
}

fn solve(n_g: usize, backup: impl Fn(AugmentedState, &[f64]) -> f64) -> OracleSolution {
    let n = num_states(n_g);
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    while residual > RESIDUAL_TOL && sweeps < MAX_SWEEPS {
        residual = 0.0;
        for (i, slot) in next.iter_mut().enumerate() {
            *slot = backup(state_at(n_g, i), &values);
            residual = residual.max((*slot - values[i]).abs());
        }
        std::mem::swap(&mut values, &mut next);
        sweeps += 1;
    }
    OracleSolution { values, residual, sweeps }
}

/// Expected terminal reward of a fixed stochastic policy, given as the
/// probability of choosing `right` in each augmented state.
pub fn evaluate_policy(config: &EnvConfig, right_prob: &dyn Fn(AugmentedState) -> f64) -> OracleSolution {
    let n_g = config.n_g;
    solve(n_g, |s, v| {
        let pr = right_prob(s);
        pr * action_value(n_g, s, Action::Right, v) + (1.0 - pr) * action_value(n_g, s, Action::Left, v)
    })
}

/// Optimal values over all policies on the augmented chain.
pub fn optimal_values(config: &EnvConfig) -> OracleSolution {
    let n_g = config.n_g;
    solve(n_g, |s, v| action_value(n_g, s, Action::Right, v).max(action_value(n_g, s, Action::Left, v)))
}

/// Greedy deterministic policy with respect to the optimal values; ties go
/// to `left`, which always shortens the episode.
pub fn optimal_policy(config: &EnvConfig) -> impl Fn(AugmentedState) -> f64 {
    let n_g = config.n_g;
    let sol = optimal_values(config);
    let choice: Vec<f64> = (0..num_states(n_g))
        .map(|i| {
            let s = state_at(n_g, i);
            let right = action_value(n_g, s, Action::Right, &sol.values);
            let left = action_value(n_g, s, Action::Left, &sol.values);
            if right > left + 1e-12 { 1.0 } else { 0.0 }
        })
        .collect();
    move |s: AugmentedState| choice[state_index(n_g, s)]
}

/// Expected undiscounted episode reward from the start state: optimal when
/// `policy` is `None`, otherwise that of the given policy.
pub fn optimal_return_oracle(config: &EnvConfig, policy: Option<&dyn Fn(AugmentedState) -> f64>) -> f64 {
    let sol = match policy {
        Some(p) => evaluate_policy(config, p),
        None => optimal_values(config),
    };
    sol.start_value(config.n_g)
}

use rand::Rng;

use super::oracle::AugmentedState;
use super::{Action, ChainEnv, EnvConfig};

#[derive(Clone, Copy, Debug)]
pub struct TabularQConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for TabularQConfig {
    fn default() -> Self {
        Self { episodes: 20_000, learning_rate: 0.05, epsilon: 0.2, gamma: 1.0 }
    }
}

/// Greedy policy read off a learned Q table over `(position, visited)`.
#[derive(Clone, Debug)]
pub struct TabularPolicy {
    n_g: usize,
    q: Vec<[f64; 2]>,
}

impl TabularPolicy {
    fn index(&self, s: AugmentedState) -> usize {
        s.position + (self.n_g + 1) * s.visited as usize
    }

    pub fn q(&self, s: AugmentedState) -> [f64; 2] {
        self.q[self.index(s)]
    }

    pub fn greedy(&self, s: AugmentedState) -> Action {
        let q = self.q(s);
        if q[Action::Right.index()] > q[Action::Left.index()] { Action::Right } else { Action::Left }
    }

    /// Probability of `right` under the greedy policy, for the oracle.
    pub fn right_prob(&self, s: AugmentedState) -> f64 {
        (self.greedy(s) == Action::Right) as u8 as f64
    }
}

/// One-step Q-learning on the chain with the visited bit observed.
pub fn tabular_q_learning<R: Rng + ?Sized>(config: &EnvConfig, params: &TabularQConfig, rng: &mut R) -> TabularPolicy {
    let env = ChainEnv::new(*config);
    let mut policy = TabularPolicy { n_g: config.n_g, q: vec![[0.0; 2]; 2 * (config.n_g + 1)] };
    for _ in 0..params.episodes {
        let mut state = env.reset();
        loop {
            let s = AugmentedState { position: state.position, visited: state.visited_goal };
            let action = if rng.random::<f64>() < params.epsilon {
                Action::from_index(rng.random_range(0..Action::COUNT))
            } else {
                policy.greedy(s)
            };
            let out = env.step(&state, action, rng).expect("live episode");
            let bootstrap = if out.done && !out.truncated {
                0.0
            } else {
                let next = AugmentedState { position: out.next_state.position, visited: out.next_state.visited_goal };
                let q = policy.q(next);
                q[0].max(q[1])
            };
            let target = out.external_reward + params.gamma * bootstrap;
            let idx = policy.index(s);
            let entry = &mut policy.q[idx][action.index()];
            *entry += params.learning_rate * (target - *entry);
            if out.done {
                break;
            }
            state = out.next_state;
        }
    }
    policy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::optimal_return_oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn learns_to_push_right_on_small_chain() {
        let config = EnvConfig::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pi = tabular_q_learning(&config, &TabularQConfig::default(), &mut rng);
        assert_eq!(pi.greedy(AugmentedState { position: 2, visited: false }), Action::Right);
        let v = optimal_return_oracle(&config, Some(&|s| pi.right_prob(s)));
        let opt = optimal_return_oracle(&config, None);
        assert!(v >= 0.99 * opt, "{v} vs {opt}");
    }
}

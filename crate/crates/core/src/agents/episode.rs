use rand::Rng;

use super::{Agent, ControllerTransition, MetaTransition};
use crate::env::{goal_reached, Action, ChainEnv};
use crate::error::Result;

/// One environment step as seen by the trace dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub position: usize,
    pub action: Action,
    pub next_position: usize,
    pub done: bool,
    pub reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeResult {
    /// Undiscounted external reward.
    pub reward: f64,
    pub steps: usize,
    pub truncated: bool,
    pub goals_set: usize,
    pub goals_reached: usize,
}

/// Plays one training episode: every step is stored and trained on, and every
/// finished goal closes a meta transition.
pub fn run_episode<R: Rng + ?Sized>(
    agent: &mut Agent,
    env: &ChainEnv,
    rng: &mut R,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<EpisodeResult> {
    let mut state = env.reset();
    let mut obs = agent.observe(&state);
    let mut result = EpisodeResult { reward: 0.0, steps: 0, truncated: false, goals_set: 0, goals_reached: 0 };
    loop {
        let goal = agent.pick_goal(obs, rng)?;
        let target = agent.goal_position(goal);
        let meta_start = obs;
        let mut collected = 0.0;
        result.goals_set += 1;
        let (terminal, finished) = loop {
            let action = agent.act(obs, goal, rng)?;
            let out = env.step(&state, Action::from_index(action), rng)?;
            let next_obs = agent.observe(&out.next_state);
            let reached = goal_reached(&out.next_state, target);
            let terminal = out.done && !out.truncated;
            agent.record_step(ControllerTransition {
                goal,
                state: obs,
                action,
                internal_reward: if reached { 1.0 } else { 0.0 },
                next_state: next_obs,
                done: terminal,
                goal_reached: reached,
            })?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceStep {
                    step: result.steps,
                    position: state.position,
                    action: Action::from_index(action),
                    next_position: out.next_state.position,
                    done: out.done,
                    reward: out.external_reward,
                });
            }
            collected += out.external_reward;
            result.steps += 1;
            result.truncated = out.truncated;
            result.goals_reached += reached as usize;
            state = out.next_state;
            obs = next_obs;
            if reached || out.done {
                break (terminal, out.done);
            }
        };
        result.reward += collected;
        agent.record_meta(MetaTransition { state: meta_start, goal, external_return: collected, next_state: obs, done: terminal })?;
        if finished {
            return Ok(result);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Hyperparams, Variant};
    use crate::env::EnvConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hp() -> Hyperparams {
        Hyperparams { hidden: vec![8], batch_size: 4, buffer_capacity: 64, ..Hyperparams::default() }
    }

    #[test]
    fn episode_reward_is_a_chain_outcome() {
        for v in Variant::ALL {
            let env = ChainEnv::new(EnvConfig::new(5).unwrap());
            let mut agent = Agent::new(v, 5, hp(), 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut trace = Vec::new();
            let r = run_episode(&mut agent, &env, &mut rng, Some(&mut trace)).unwrap();
            assert!([0.0, 0.01, 1.0].contains(&r.reward), "{v}: {}", r.reward);
            assert_eq!(trace.len(), r.steps);
            assert_eq!(agent.stats().env_steps as usize, r.steps);
            assert_eq!(agent.stats().meta_updates as usize, r.goals_set);
            assert!(trace.last().unwrap().done);
            for w in trace.windows(2) {
                assert_eq!(w[0].next_position, w[1].position);
            }
            if !r.truncated {
                assert_eq!(trace.last().unwrap().next_position, 1);
            }
        }
    }

    #[test]
    fn single_goal_configuration_runs() {
        let env = ChainEnv::new(EnvConfig::new(4).unwrap());
        let mut agent = Agent::with_goals(Variant::MiSac, 4, vec![4], hp(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let r = run_episode(&mut agent, &env, &mut rng, None).unwrap();
            assert!(r.goals_reached <= r.goals_set);
        }
    }

    #[test]
    fn same_seeds_same_episode() {
        let run = || {
            let env = ChainEnv::new(EnvConfig::new(6).unwrap());
            let mut agent = Agent::new(Variant::AdversarialMiSac, 6, hp(), 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut trace = Vec::new();
            for _ in 0..3 {
                run_episode(&mut agent, &env, &mut rng, Some(&mut trace)).unwrap();
            }
            (trace, agent.networks().into_iter().cloned().collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}

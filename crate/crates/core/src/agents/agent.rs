use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::objectives::{
    controller_policy_loss, controller_state_value, max_q_target, meta_policy_loss, meta_state_value, q_regression_loss,
    td_target, ControllerBonus, ControllerPolicyInputs, MetaBonus, MetaPolicyInputs,
};
use super::{ControllerTransition, Hyperparams, MetaTransition, Observation, ReplayBuffer, Variant};
use crate::autodiff::{adam_step, log_softmax_rows, AdamConfig, AdamState, Dropout, DropoutMask, Head, MlpParams, ParamSlot, Tape, Tensor, Var};
use crate::dist::{argmax, gumbel_softmax_sample, sample_gumbel_noise, CategoricalDist, PolicyTable};
use crate::env::{Action, EnvState};
use crate::error::{Error, Result};

/// Parameters plus their optimizer state.
#[derive(Clone, Debug)]
pub struct Network {
    pub params: MlpParams,
    pub optimizer: AdamState,
}

impl Network {
    fn new(params: MlpParams, learning_rate: f64) -> Self {
        let optimizer = AdamState::for_mlp(AdamConfig::with_lr(learning_rate), &params);
        Self { params, optimizer }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub env_steps: u64,
    pub controller_updates: u64,
    pub meta_updates: u64,
    /// Optimizer steps dropped because a gradient was non-finite.
    pub skipped_updates: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerLosses {
    pub q_loss: f64,
    pub policy_loss: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaLosses {
    pub q_loss: f64,
    pub policy_loss: Option<f64>,
}

/// A two-level agent for the chain with `n_g` states.
///
/// Controller networks read `[one-hot state | visited? | one-hot goal]` and
/// emit two action scores; meta networks read the state part and emit one
/// score per goal. Goals are indices into [`Agent::goals`].
#[derive(Clone, Debug)]
pub struct Agent {
    variant: Variant,
    hp: Hyperparams,
    n_g: usize,
    goals: Vec<usize>,
    pub controller_q: Network,
    pub meta_q: Network,
    /// Absent for [`Variant::Hdqn`].
    pub controller_pi: Option<Network>,
    pub meta_pi: Option<Network>,
    controller_buffer: ReplayBuffer<ControllerTransition>,
    meta_buffer: ReplayBuffer<MetaTransition>,
    /// Dropout masks and Gumbel noise for updates.
    update_rng: ChaCha8Rng,
    greedy: bool,
    stats: AgentStats,
}

/// First-occurrence order of distinct items and each item's index into it.
fn dedupe<T: PartialEq + Copy>(items: impl IntoIterator<Item = T>) -> (Vec<T>, Vec<usize>) {
    let mut unique: Vec<T> = Vec::new();
    let index = items
        .into_iter()
        .map(|x| match unique.iter().position(|u| *u == x) {
            Some(i) => i,
            None => {
                unique.push(x);
                unique.len() - 1
            }
        })
        .collect();
    (unique, index)
}

impl Agent {
    /// Agent whose goals are all `n_g` states.
    pub fn new(variant: Variant, n_g: usize, hp: Hyperparams, seed: u64) -> Result<Self> {
        Self::with_goals(variant, n_g, (1..=n_g).collect(), hp, seed)
    }

    pub fn with_goals(variant: Variant, n_g: usize, goals: Vec<usize>, hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        if n_g < 3 {
            return Err(Error::Config(format!("n_g must be at least 3, got {n_g}")));
        }
        if goals.is_empty() || goals.iter().any(|&g| g == 0 || g > n_g) {
            return Err(Error::Config(format!("goals {goals:?} must be non-empty positions in 1..={n_g}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state_dim = n_g + hp.observe_visited as usize;
        let n_goals = goals.len();
        let ctrl_in = state_dim + n_goals;
        // All four networks are drawn for every variant so equal seeds give equal critics.
        let cq = MlpParams::new(ctrl_in, &hp.hidden, Action::COUNT, Head::Linear, &mut rng);
        let mq = MlpParams::new(state_dim, &hp.hidden, n_goals, Head::Linear, &mut rng);
        let cp = MlpParams::new(ctrl_in, &hp.hidden, Action::COUNT, Head::Softmax, &mut rng);
        let mp = MlpParams::new(state_dim, &hp.hidden, n_goals, Head::Softmax, &mut rng);
        let lr = hp.learning_rate;
        let sac = variant.is_sac();
        Ok(Self {
            variant,
            n_g,
            goals,
            controller_q: Network::new(cq, lr),
            meta_q: Network::new(mq, lr),
            controller_pi: sac.then(|| Network::new(cp, lr)),
            meta_pi: sac.then(|| Network::new(mp, lr)),
            controller_buffer: ReplayBuffer::new(hp.buffer_capacity, rng.random()),
            meta_buffer: ReplayBuffer::new(hp.buffer_capacity, rng.random()),
            update_rng: ChaCha8Rng::seed_from_u64(rng.random()),
            greedy: false,
            stats: AgentStats::default(),
            hp,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn n_g(&self) -> usize {
        self.n_g
    }

    pub fn goals(&self) -> &[usize] {
        &self.goals
    }

    /// Position of goal index `goal`.
    pub fn goal_position(&self, goal: usize) -> usize {
        self.goals[goal]
    }

    pub fn stats(&self) -> AgentStats {
        self.stats
    }

    /// Greedy execution: argmax actions and goals, no exploration.
    pub fn set_greedy(&mut self, greedy: bool) {
        self.greedy = greedy;
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        Observation { position: state.position, visited: self.hp.observe_visited && state.visited_goal }
    }

    fn state_dim(&self) -> usize {
        self.n_g + self.hp.observe_visited as usize
    }

    fn push_state(&self, obs: Observation, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + self.n_g, 0.0);
        out[start + obs.position - 1] = 1.0;
        if self.hp.observe_visited {
            out.push(if obs.visited { 1.0 } else { 0.0 });
        }
    }

    /// Meta-network input, one row per state.
    pub fn state_rows(&self, states: &[Observation]) -> Tensor {
        let mut data = Vec::with_capacity(states.len() * self.state_dim());
        for &s in states {
            self.push_state(s, &mut data);
        }
        Tensor::matrix(states.len(), self.state_dim(), data)
    }

    /// Controller-network input, one row per `(state, goal index)`.
    pub fn controller_rows(&self, pairs: &[(Observation, usize)]) -> Tensor {
        let width = self.state_dim() + self.goals.len();
        let mut data = Vec::with_capacity(pairs.len() * width);
        for &(s, g) in pairs {
            self.push_state(s, &mut data);
            let start = data.len();
            data.resize(start + self.goals.len(), 0.0);
            data[start + g] = 1.0;
        }
        Tensor::matrix(pairs.len(), width, data)
    }

    /// Rows `k·G + g` for every goal of every state.
    fn all_goal_rows(&self, states: &[Observation]) -> Tensor {
        let pairs: Vec<_> = states.iter().flat_map(|&s| (0..self.goals.len()).map(move |g| (s, g))).collect();
        self.controller_rows(&pairs)
    }

    fn sac_nets(&self) -> Result<(&Network, &Network)> {
        match (&self.controller_pi, &self.meta_pi) {
            (Some(c), Some(m)) => Ok((c, m)),
            _ => Err(Error::Usage(format!("{} has no policy networks", self.variant))),
        }
    }

    fn epsilon_greedy<R: Rng + ?Sized>(&self, epsilon: f64, scores: &[f64], rng: &mut R) -> usize {
        if !self.greedy && rng.random::<f64>() < epsilon {
            rng.random_range(0..scores.len())
        } else {
            argmax(scores)
        }
    }

    fn sample_or_argmax<R: Rng + ?Sized>(&self, logits: &[f64], rng: &mut R) -> Result<usize> {
        if self.greedy {
            Ok(argmax(logits))
        } else {
            Ok(gumbel_softmax_sample(logits, self.hp.tau_gumbel, rng)?.hard_index)
        }
    }

    /// Goal index for the meta-controller at `obs`.
    pub fn pick_goal<R: Rng + ?Sized>(&mut self, obs: Observation, rng: &mut R) -> Result<usize> {
        let x = self.state_rows(&[obs]);
        match &self.meta_pi {
            Some(pi) => self.sample_or_argmax(pi.params.eval_logits(&x)?.data(), rng),
            None => {
                let q = self.meta_q.params.eval(&x)?;
                let eps = self.hp.meta_epsilon.value(self.stats.env_steps);
                Ok(self.epsilon_greedy(eps, q.data(), rng))
            }
        }
    }

    /// Action index for the controller at `obs` pursuing `goal`.
    pub fn act<R: Rng + ?Sized>(&mut self, obs: Observation, goal: usize, rng: &mut R) -> Result<usize> {
        let x = self.controller_rows(&[(obs, goal)]);
        match &self.controller_pi {
            Some(pi) => self.sample_or_argmax(pi.params.eval_logits(&x)?.data(), rng),
            None => {
                let q = self.controller_q.params.eval(&x)?;
                let eps = self.hp.controller_epsilon.value(self.stats.env_steps);
                Ok(self.epsilon_greedy(eps, q.data(), rng))
            }
        }
    }

    /// Stores one environment step and runs the controller updates.
    pub fn record_step(&mut self, t: ControllerTransition) -> Result<Option<ControllerLosses>> {
        self.controller_buffer.push(t);
        self.stats.env_steps += 1;
        let mut last = None;
        for _ in 0..self.hp.updates_per_env_step {
            last = self.update_controller()?;
        }
        Ok(last)
    }

    /// Stores one completed goal and runs one meta update.
    pub fn record_meta(&mut self, t: MetaTransition) -> Result<Option<MetaLosses>> {
        self.meta_buffer.push(t);
        if self.hp.updates_per_env_step == 0 {
            return Ok(None);
        }
        self.update_meta()
    }

    fn minimize(net: &mut Network, tape: &mut Tape, slot: ParamSlot, loss: Var, what: &'static str, stats: &mut AgentStats) -> Result<f64> {
        let value = tape.value(loss).scalar_value();
        if !value.is_finite() {
            return Err(Error::NonFinite(what));
        }
        let grads = tape.backward_scalar(loss)?;
        if !adam_step(&mut net.params, grads.get(slot), &mut net.optimizer)? {
            stats.skipped_updates += 1;
        }
        Ok(value)
    }

    fn controller_bonus(&self) -> ControllerBonus {
        if self.variant.controller_uses_mi() { ControllerBonus::MutualInformation } else { ControllerBonus::Entropy }
    }

    /// Controller policy tables at each state: `π_g(·|s)` and `π_ag(·|s,g)` for all goals.
    fn policy_tables(&self, states: &[Observation]) -> Result<Vec<PolicyTable>> {
        let (cpi, mpi) = self.sac_nets()?;
        let goal_probs = mpi.params.eval(&self.state_rows(states))?;
        let action_probs = cpi.params.eval(&self.all_goal_rows(states))?;
        let g = self.goals.len();
        (0..states.len())
            .map(|k| {
                let w = CategoricalDist::new(goal_probs.row_slice(k).to_vec())?;
                let rows = (0..g).map(|gi| CategoricalDist::new(action_probs.row_slice(k * g + gi).to_vec())).collect::<Result<_>>()?;
                PolicyTable::new(w, rows)
            })
            .collect()
    }

    /// Soft controller values `V1(s)` for each state.
    pub fn controller_values(&self, states: &[Observation]) -> Result<Vec<f64>> {
        let tables = self.policy_tables(states)?;
        let q = self.controller_q.params.eval(&self.all_goal_rows(states))?;
        let g = self.goals.len();
        let bonus = self.controller_bonus();
        Ok(tables
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let qk: Vec<Vec<f64>> = (0..g).map(|gi| q.row_slice(k * g + gi).to_vec()).collect();
                controller_state_value(t, &qk, self.hp.alpha, bonus)
            })
            .collect())
    }

    /// Soft meta values `V2(s)` for each state.
    pub fn meta_values(&self, states: &[Observation]) -> Result<Vec<f64>> {
        let q = self.meta_q.params.eval(&self.state_rows(states))?;
        let tables = self.policy_tables(states)?;
        Ok(tables
            .iter()
            .enumerate()
            .map(|(k, t)| {
                meta_state_value(t, q.row_slice(k), self.hp.alpha, self.meta_bonus())
            })
            .collect())
    }

    /// Critic targets for a controller batch.
    pub fn controller_targets(&self, batch: &[ControllerTransition]) -> Result<Vec<f64>> {
        let gamma = self.hp.gamma;
        if self.variant.is_sac() {
            let live: Vec<Observation> = batch.iter().filter(|t| !t.done).map(|t| t.next_state).collect();
            let (unique, _) = dedupe(live);
            let values = self.controller_values(&unique)?;
            Ok(batch
                .iter()
                .map(|t| {
                    let v = unique.iter().position(|s| *s == t.next_state).map_or(0.0, |k| values[k]);
                    td_target(t.internal_reward, gamma, v, t.done)
                })
                .collect())
        } else {
            let (pairs, index) = dedupe(batch.iter().map(|t| (t.next_state, t.goal)));
            let q = self.controller_q.params.eval(&self.controller_rows(&pairs))?;
            Ok(batch
                .iter()
                .zip(index)
                .map(|(t, k)| max_q_target(t.internal_reward, gamma, q.row_slice(k), t.done || t.goal_reached))
                .collect())
        }
    }

    /// Critic targets for a meta batch.
    pub fn meta_targets(&self, batch: &[MetaTransition]) -> Result<Vec<f64>> {
        let gamma = self.hp.gamma;
        let (unique, index) = dedupe(batch.iter().map(|t| t.next_state));
        if self.variant.is_sac() {
            let values = self.meta_values(&unique)?;
            Ok(batch.iter().zip(index).map(|(t, k)| td_target(t.external_return, gamma, values[k], t.done)).collect())
        } else {
            let q = self.meta_q.params.eval(&self.state_rows(&unique))?;
            Ok(batch.iter().zip(index).map(|(t, k)| max_q_target(t.external_return, gamma, q.row_slice(k), t.done)).collect())
        }
    }

    /// Inputs of the controller policy objective on `batch`.
    pub fn controller_policy_inputs(&self, batch: &[ControllerTransition], noise: Option<Tensor>) -> Result<ControllerPolicyInputs> {
        let (_, mpi) = self.sac_nets()?;
        let (states, item_states) = dedupe(batch.iter().map(|t| t.state));
        let (pairs, pair_index) = dedupe(batch.iter().map(|t| (t.state, t.goal)));
        let q_pairs = self.controller_q.params.eval(&self.controller_rows(&pairs))?;
        let mut q = Vec::with_capacity(batch.len() * Action::COUNT);
        for &k in &pair_index {
            q.extend_from_slice(q_pairs.row_slice(k));
        }
        let q_values = Tensor::matrix(batch.len(), Action::COUNT, q);
        let g = self.goals.len();
        Ok(match self.controller_bonus() {
            ControllerBonus::MutualInformation => ControllerPolicyInputs {
                rows: self.all_goal_rows(&states),
                item_rows: batch.iter().zip(&item_states).map(|(t, k)| k * g + t.goal).collect(),
                item_states,
                goal_log_probs: Some(log_softmax_rows(&mpi.params.eval_logits(&self.state_rows(&states))?)),
                q_values,
                noise,
            },
            ControllerBonus::Entropy => ControllerPolicyInputs {
                rows: self.controller_rows(&pairs),
                item_rows: pair_index,
                item_states,
                goal_log_probs: None,
                q_values,
                noise,
            },
        })
    }

    /// Inputs of the meta policy objective on `batch`.
    pub fn meta_policy_inputs(&self, batch: &[MetaTransition], noise: Option<Tensor>) -> Result<MetaPolicyInputs> {
        let (cpi, _) = self.sac_nets()?;
        let (states, item_states) = dedupe(batch.iter().map(|t| t.state));
        let rows = self.state_rows(&states);
        let q_states = self.meta_q.params.eval(&rows)?;
        let g = self.goals.len();
        let mut q = Vec::with_capacity(batch.len() * g);
        for &k in &item_states {
            q.extend_from_slice(q_states.row_slice(k));
        }
        let action_log_probs = if self.meta_bonus() == MetaBonus::MutualInformation {
            Some(log_softmax_rows(&cpi.params.eval_logits(&self.all_goal_rows(&states))?))
        } else {
            None
        };
        Ok(MetaPolicyInputs { rows, item_states, q_values: Tensor::matrix(batch.len(), g, q), action_log_probs, noise })
    }

    fn meta_bonus(&self) -> MetaBonus {
        if self.variant == Variant::AdversarialMiSac { MetaBonus::MutualInformation } else { MetaBonus::Entropy }
    }

    /// Dropout masks for one critic pass; `None` for HDQN or a zero rate.
    pub fn critic_dropout_mask(&mut self, rows: usize) -> Option<DropoutMask> {
        if !self.variant.is_sac() {
            return None;
        }
        Dropout { rate: self.hp.dropout }.mask(rows, &self.hp.hidden, &mut self.update_rng)
    }

    fn critic_tape(params: &MlpParams, inputs: &Tensor, mask: Option<&DropoutMask>, cols: &[usize], targets: &[f64]) -> Result<(Tape, ParamSlot, Var)> {
        let mut tape = Tape::new();
        let slot = tape.register(params);
        let loss = q_regression_loss(&mut tape, slot, inputs, mask, cols, targets)?;
        Ok((tape, slot, loss))
    }

    fn controller_critic_batch(&self, batch: &[ControllerTransition]) -> (Tensor, Vec<usize>) {
        let pairs: Vec<_> = batch.iter().map(|t| (t.state, t.goal)).collect();
        (self.controller_rows(&pairs), batch.iter().map(|t| t.action).collect())
    }

    fn meta_critic_batch(&self, batch: &[MetaTransition]) -> (Tensor, Vec<usize>) {
        let states: Vec<_> = batch.iter().map(|t| t.state).collect();
        (self.state_rows(&states), batch.iter().map(|t| t.goal).collect())
    }

    /// Controller critic loss against fixed targets, without updating.
    pub fn controller_q_objective(&self, batch: &[ControllerTransition], targets: &[f64], mask: Option<&DropoutMask>) -> Result<f64> {
        let (x, cols) = self.controller_critic_batch(batch);
        let (tape, _, loss) = Self::critic_tape(&self.controller_q.params, &x, mask, &cols, targets)?;
        Ok(tape.value(loss).scalar_value())
    }

    /// One Adam step on the controller critic; returns the pre-step loss.
    pub fn controller_q_update(&mut self, batch: &[ControllerTransition], targets: &[f64], mask: Option<&DropoutMask>) -> Result<f64> {
        let (x, cols) = self.controller_critic_batch(batch);
        let (mut tape, slot, loss) = Self::critic_tape(&self.controller_q.params, &x, mask, &cols, targets)?;
        Self::minimize(&mut self.controller_q, &mut tape, slot, loss, "controller critic loss", &mut self.stats)
    }

    pub fn meta_q_objective(&self, batch: &[MetaTransition], targets: &[f64], mask: Option<&DropoutMask>) -> Result<f64> {
        let (x, cols) = self.meta_critic_batch(batch);
        let (tape, _, loss) = Self::critic_tape(&self.meta_q.params, &x, mask, &cols, targets)?;
        Ok(tape.value(loss).scalar_value())
    }

    pub fn meta_q_update(&mut self, batch: &[MetaTransition], targets: &[f64], mask: Option<&DropoutMask>) -> Result<f64> {
        let (x, cols) = self.meta_critic_batch(batch);
        let (mut tape, slot, loss) = Self::critic_tape(&self.meta_q.params, &x, mask, &cols, targets)?;
        Self::minimize(&mut self.meta_q, &mut tape, slot, loss, "meta critic loss", &mut self.stats)
    }

    fn controller_policy_tape(&self, batch: &[ControllerTransition], noise: Option<Tensor>) -> Result<(Tape, ParamSlot, Var)> {
        let inputs = self.controller_policy_inputs(batch, noise)?;
        let (cpi, _) = self.sac_nets()?;
        let mut tape = Tape::new();
        let slot = tape.register(&cpi.params);
        let loss = controller_policy_loss(&mut tape, slot, &inputs, self.controller_bonus(), self.hp.alpha, self.hp.tau_gumbel)?;
        Ok((tape, slot, loss.total))
    }

    fn meta_policy_tape(&self, batch: &[MetaTransition], noise: Option<Tensor>) -> Result<(Tape, ParamSlot, Var)> {
        let inputs = self.meta_policy_inputs(batch, noise)?;
        let (_, mpi) = self.sac_nets()?;
        let mut tape = Tape::new();
        let slot = tape.register(&mpi.params);
        let loss = meta_policy_loss(&mut tape, slot, &inputs, self.meta_bonus(), self.hp.alpha, self.hp.tau_gumbel)?;
        Ok((tape, slot, loss.total))
    }

    /// Controller policy loss on a fixed batch, without updating.
    pub fn controller_policy_objective(&self, batch: &[ControllerTransition], noise: Option<Tensor>) -> Result<f64> {
        let (tape, _, loss) = self.controller_policy_tape(batch, noise)?;
        Ok(tape.value(loss).scalar_value())
    }

    /// One Adam step on the controller policy; returns the pre-step loss.
    pub fn controller_policy_update(&mut self, batch: &[ControllerTransition], noise: Option<Tensor>) -> Result<f64> {
        let (mut tape, slot, loss) = self.controller_policy_tape(batch, noise)?;
        let net = self.controller_pi.as_mut().expect("policy tape implies a policy network");
        Self::minimize(net, &mut tape, slot, loss, "controller policy loss", &mut self.stats)
    }

    pub fn meta_policy_objective(&self, batch: &[MetaTransition], noise: Option<Tensor>) -> Result<f64> {
        let (tape, _, loss) = self.meta_policy_tape(batch, noise)?;
        Ok(tape.value(loss).scalar_value())
    }

    pub fn meta_policy_update(&mut self, batch: &[MetaTransition], noise: Option<Tensor>) -> Result<f64> {
        let (mut tape, slot, loss) = self.meta_policy_tape(batch, noise)?;
        let net = self.meta_pi.as_mut().expect("policy tape implies a policy network");
        Self::minimize(net, &mut tape, slot, loss, "meta policy loss", &mut self.stats)
    }

    /// Gumbel noise for a policy batch, or `None` under exact expectations.
    pub fn policy_noise(&mut self, rows: usize, k: usize) -> Option<Tensor> {
        match self.hp.reparam {
            super::Reparam::Gumbel => {
                let data = (0..rows).flat_map(|_| sample_gumbel_noise(k, &mut self.update_rng)).collect();
                Some(Tensor::matrix(rows, k, data))
            }
            super::Reparam::Exact => None,
        }
    }

    /// One controller update on a fresh minibatch; `None` if nothing is stored.
    pub fn update_controller(&mut self) -> Result<Option<ControllerLosses>> {
        let batch = self.controller_buffer.sample(self.hp.batch_size);
        if batch.is_empty() {
            return Ok(None);
        }
        let targets = self.controller_targets(&batch)?;
        let mask = self.critic_dropout_mask(batch.len());
        let q_loss = self.controller_q_update(&batch, &targets, mask.as_ref())?;
        let policy_loss = if self.variant.is_sac() {
            let noise = self.policy_noise(batch.len(), Action::COUNT);
            Some(self.controller_policy_update(&batch, noise)?)
        } else {
            None
        };
        self.stats.controller_updates += 1;
        Ok(Some(ControllerLosses { q_loss, policy_loss }))
    }

    /// One meta update on a fresh minibatch; `None` if nothing is stored.
    pub fn update_meta(&mut self) -> Result<Option<MetaLosses>> {
        let batch = self.meta_buffer.sample(self.hp.batch_size);
        if batch.is_empty() {
            return Ok(None);
        }
        let targets = self.meta_targets(&batch)?;
        let mask = self.critic_dropout_mask(batch.len());
        let q_loss = self.meta_q_update(&batch, &targets, mask.as_ref())?;
        let policy_loss = if self.variant.is_sac() {
            let noise = self.policy_noise(batch.len(), self.goals.len());
            Some(self.meta_policy_update(&batch, noise)?)
        } else {
            None
        };
        self.stats.meta_updates += 1;
        Ok(Some(MetaLosses { q_loss, policy_loss }))
    }

    /// Stored controller transitions, oldest slot first.
    pub fn controller_transitions(&self) -> impl Iterator<Item = &ControllerTransition> {
        self.controller_buffer.iter()
    }

    pub fn meta_transitions(&self) -> impl Iterator<Item = &MetaTransition> {
        self.meta_buffer.iter()
    }

    /// Networks in checkpoint order: controller Q, meta Q, then policies if present.
    pub fn networks(&self) -> Vec<&MlpParams> {
        let mut nets = vec![&self.controller_q.params, &self.meta_q.params];
        nets.extend(self.controller_pi.iter().chain(&self.meta_pi).map(|n| &n.params));
        nets
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        super::checkpoint::write_params(file, &self.networks())
    }

    /// Replaces all network parameters; shapes must match this agent.
    pub fn load_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        let nets = super::checkpoint::read_params(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let mut slots: Vec<&mut Network> = vec![&mut self.controller_q, &mut self.meta_q];
        slots.extend(self.controller_pi.iter_mut().chain(self.meta_pi.iter_mut()));
        if nets.len() != slots.len() {
            return Err(Error::Config(format!("checkpoint holds {} networks, agent has {}", nets.len(), slots.len())));
        }
        for (slot, params) in slots.iter().zip(&nets) {
            let same = slot.params.head == params.head
                && slot.params.tensors().iter().zip(params.tensors()).all(|(a, b)| a.shape() == b.shape())
                && slot.params.layers.len() == params.layers.len();
            if !same {
                return Err(Error::Config("checkpoint network shapes do not match the agent".into()));
            }
        }
        for (slot, params) in slots.into_iter().zip(nets) {
            slot.params = params;
        }
        Ok(())
    }
}

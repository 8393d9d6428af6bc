//! Loss builders and soft state values, independent of any agent state.
//!
//! Every builder records onto a caller-supplied tape against an already
//! registered parameter slot, so the same code path serves training and the
//! finite-difference checks.

use crate::autodiff::{forward_slot, DropoutMask, ParamSlot, Tape, Tensor, Var};
use crate::dist::{entropy, entropy_var, gumbel_softmax_var, mutual_information, mutual_information_var, PolicyTable};
use crate::error::{shape_err, Result};

/// Information bonus carried by a controller objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControllerBonus {
    /// `+α·E_g H(π_ag(·|s,g))` in values, `−α·H` in the loss.
    Entropy,
    /// `−α·I(a;g|s)` in values, `+α·I` in the loss.
    MutualInformation,
}

/// Information bonus carried by a meta-controller objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaBonus {
    /// `+α·H(π_g(·|s))` in values, `−α·H` in the loss.
    Entropy,
    /// The adversarial bonus: `+α·I(a;g|s)` in values, `−α·I` in the loss.
    MutualInformation,
}

/// `r + γ·v'`, with no bootstrap from a terminal successor.
pub fn td_target(reward: f64, gamma: f64, next_value: f64, terminal: bool) -> f64 {
    if terminal { reward } else { reward + gamma * next_value }
}

/// `r + γ·max_a Q(s', a)`, with no bootstrap from a terminal successor.
pub fn max_q_target(reward: f64, gamma: f64, next_q: &[f64], terminal: bool) -> f64 {
    let best = next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    td_target(reward, gamma, best, terminal)
}

/// Soft controller value `Σ_g π_g Σ_a π_ag·Q1 + bonus`.
///
/// `q1[g][a]` is `Q1(g, s, a)` and `table` holds `π_g(·|s)` and `π_ag(·|s,g)`.
pub fn controller_state_value(table: &PolicyTable, q1: &[Vec<f64>], alpha: f64, bonus: ControllerBonus) -> f64 {
    let w = table.goal_dist.probs();
    let expected: f64 = w
        .iter()
        .zip(&table.action_dists)
        .zip(q1)
        .map(|((wg, pg), qg)| wg * pg.probs().iter().zip(qg).map(|(p, q)| p * q).sum::<f64>())
        .sum();
    let info = match bonus {
        ControllerBonus::Entropy => alpha * w.iter().zip(&table.action_dists).map(|(wg, pg)| wg * entropy(pg)).sum::<f64>(),
        ControllerBonus::MutualInformation => -alpha * mutual_information(table),
    };
    expected + info
}

/// Soft meta value `Σ_g π_g·Q2 + bonus`, where `q2[g]` is `Q2(s, g)`.
///
/// The action rows of `table` are read only for the MI bonus.
pub fn meta_state_value(table: &PolicyTable, q2: &[f64], alpha: f64, bonus: MetaBonus) -> f64 {
    let expected: f64 = table.goal_dist.probs().iter().zip(q2).map(|(p, q)| p * q).sum();
    let info = match bonus {
        MetaBonus::Entropy => alpha * entropy(&table.goal_dist),
        MetaBonus::MutualInformation => alpha * mutual_information(table),
    };
    expected + info
}

/// `½·mean_b (Q(x_b, a_b) − y_b)²` for a critic registered at `slot`.
pub fn q_regression_loss(
    tape: &mut Tape,
    slot: ParamSlot,
    inputs: &Tensor,
    mask: Option<&DropoutMask>,
    actions: &[usize],
    targets: &[f64],
) -> Result<Var> {
    let b = inputs.rows();
    if actions.len() != b || targets.len() != b {
        return shape_err(format!("critic batch: {b} inputs, {} actions, {} targets", actions.len(), targets.len()));
    }
    let x = tape.constant(inputs.clone());
    let q = forward_slot(tape, slot, x, mask)?.output;
    let chosen = tape.select_cols(q, actions.to_vec());
    let y = tape.constant(Tensor::matrix(b, 1, targets.to_vec()));
    let diff = tape.sub(chosen, y);
    let sq = tape.mul(diff, diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 0.5 / b as f64))
}

/// The pieces of a policy objective; `total = bonus − q_term`.
#[derive(Clone, Copy, Debug)]
pub struct PolicyLoss {
    pub total: Var,
    /// Signed information term as it enters the loss.
    pub bonus: Var,
    /// `mean_b Σ_k y_bk·Q_bk`.
    pub q_term: Var,
}

/// Minibatch for the controller policy objective.
///
/// For [`ControllerBonus::MutualInformation`] the rows must enumerate every
/// goal of each unique state, goal-major: row `k·G + g` is `(s_k, g)`.
#[derive(Clone, Debug)]
pub struct ControllerPolicyInputs {
    /// Policy-network input rows.
    pub rows: Tensor,
    /// Row of `rows` holding each batch item's `(s_b, g_b)`.
    pub item_rows: Vec<usize>,
    /// Unique-state index of each batch item.
    pub item_states: Vec<usize>,
    /// `log π_g(·|s_k)` as `[S×G]`; required for the MI bonus.
    pub goal_log_probs: Option<Tensor>,
    /// `Q1(g_b, s_b, ·)` as `[B×A]`.
    pub q_values: Tensor,
    /// Gumbel noise `[B×A]`; `None` takes the exact expectation.
    pub noise: Option<Tensor>,
}

/// Minibatch for the meta-controller policy objective.
#[derive(Clone, Debug)]
pub struct MetaPolicyInputs {
    /// One input row per unique state.
    pub rows: Tensor,
    /// Unique-state index of each batch item.
    pub item_states: Vec<usize>,
    /// `Q2(s_b, ·)` as `[B×G]`.
    pub q_values: Tensor,
    /// `log π_ag(·|s_k,g)` as `[S·G×A]`; required for the adversarial bonus.
    pub action_log_probs: Option<Tensor>,
    pub noise: Option<Tensor>,
}

/// `mean_b Σ_k y_bk·Q_bk` with `y` the relaxed sample or the exact policy.
fn expected_q(tape: &mut Tape, logits: Var, item_rows: &[usize], q: &Tensor, noise: Option<&Tensor>, tau: f64) -> Result<Var> {
    let b = item_rows.len();
    let k = tape.value(logits).cols();
    if q.dims2() != (b, k) {
        return shape_err(format!("Q values {:?} for a {b}×{k} policy batch", q.shape()));
    }
    let picked = tape.gather_rows(logits, item_rows.to_vec());
    let y = match noise {
        Some(n) => {
            if n.dims2() != (b, k) {
                return shape_err(format!("Gumbel noise {:?} for a {b}×{k} policy batch", n.shape()));
            }
            gumbel_softmax_var(tape, picked, n.clone(), tau)?
        }
        None => tape.softmax(picked),
    };
    let yq = tape.mul_const(y, q.clone());
    let s = tape.sum(yq);
    Ok(tape.scale(s, 1.0 / b as f64))
}

/// Mean over items of a per-row column `[r×1]`.
fn item_mean(tape: &mut Tape, per_row: Var, items: &[usize]) -> Var {
    let g = tape.gather_rows(per_row, items.to_vec());
    let s = tape.sum(g);
    tape.scale(s, 1.0 / items.len() as f64)
}

pub fn controller_policy_loss(
    tape: &mut Tape,
    slot: ParamSlot,
    inputs: &ControllerPolicyInputs,
    bonus: ControllerBonus,
    alpha: f64,
    tau: f64,
) -> Result<PolicyLoss> {
    if inputs.item_rows.len() != inputs.item_states.len() || inputs.item_rows.is_empty() {
        return shape_err(String::from("controller policy batch: item rows and states must be non-empty and aligned"));
    }
    let x = tape.constant(inputs.rows.clone());
    let logits = forward_slot(tape, slot, x, None)?.logits;
    let logp = tape.log_softmax(logits);
    let bonus = match bonus {
        ControllerBonus::Entropy => {
            let h = entropy_var(tape, logp);
            let mean_h = item_mean(tape, h, &inputs.item_rows);
            tape.scale(mean_h, -alpha)
        }
        ControllerBonus::MutualInformation => {
            let Some(logw) = &inputs.goal_log_probs else {
                return shape_err(String::from("MI bonus needs goal log-probabilities"));
            };
            let logw = tape.constant(logw.clone());
            let mi = mutual_information_var(tape, logw, logp)?;
            let mean_mi = item_mean(tape, mi, &inputs.item_states);
            tape.scale(mean_mi, alpha)
        }
    };
    let q_term = expected_q(tape, logits, &inputs.item_rows, &inputs.q_values, inputs.noise.as_ref(), tau)?;
    let total = tape.sub(bonus, q_term);
    Ok(PolicyLoss { total, bonus, q_term })
}

/// Meta policy objective: `−α·H(π_g)` or, adversarially, `−α·I` against the
/// frozen controller log-probabilities in `inputs.action_log_probs`.
pub fn meta_policy_loss(
    tape: &mut Tape,
    slot: ParamSlot,
    inputs: &MetaPolicyInputs,
    bonus: MetaBonus,
    alpha: f64,
    tau: f64,
) -> Result<PolicyLoss> {
    if inputs.item_states.is_empty() {
        return shape_err(String::from("meta policy batch is empty"));
    }
    let x = tape.constant(inputs.rows.clone());
    let logits = forward_slot(tape, slot, x, None)?.logits;
    let logw = tape.log_softmax(logits);
    let per_state = match bonus {
        MetaBonus::Entropy => entropy_var(tape, logw),
        MetaBonus::MutualInformation => {
            let Some(logp) = &inputs.action_log_probs else {
                return shape_err(String::from("adversarial bonus needs controller log-probabilities"));
            };
            let logp = tape.constant(logp.clone());
            mutual_information_var(tape, logw, logp)?
        }
    };
    let mean = item_mean(tape, per_state, &inputs.item_states);
    let bonus = tape.scale(mean, -alpha);
    let q_term = expected_q(tape, logits, &inputs.item_states, &inputs.q_values, inputs.noise.as_ref(), tau)?;
    let total = tape.sub(bonus, q_term);
    Ok(PolicyLoss { total, bonus, q_term })
}

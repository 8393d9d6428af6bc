//! Finite-difference audit of every training objective on random small networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::objectives::{
    controller_policy_loss, meta_policy_loss, q_regression_loss, ControllerBonus, ControllerPolicyInputs, MetaBonus, MetaPolicyInputs,
};
use crate::autodiff::{grad_check, linear, log_softmax_rows, DropoutMask, Head, MlpParams, Tensor};
use crate::dist::sample_gumbel_noise;
use crate::error::Result;

pub const OBJECTIVES: [&str; 7] = [
    "controller critic",
    "controller policy (MI)",
    "controller policy (entropy)",
    "meta critic",
    "meta policy (adversarial MI)",
    "meta policy (entropy)",
    "controller policy (exact expectation)",
];

/// Minimum distance of any hidden pre-activation from zero. A hundred times
/// the default step, and inputs are one-hot, so a probe cannot cross a kink.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub instances: usize,
    /// Worst relative error per entry of [`OBJECTIVES`].
    pub worst: Vec<f64>,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.worst.iter().copied().fold(0.0, f64::max)
    }
}

/// Fresh network with random biases. Zero biases put units whose inputs are
/// all zero exactly on the ReLU kink, where finite differences are one-sided.
fn random_net(rng: &mut ChaCha8Rng, input: usize, hidden: &[usize], output: usize, head: Head) -> MlpParams {
    let mut p = MlpParams::new(input, hidden, output, head, rng);
    for layer in &mut p.layers {
        for b in layer.bias.data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    p
}

/// Smallest |pre-activation| over all hidden units, with dropout applied
/// between layers as in training.
fn kink_margin(p: &MlpParams, input: &Tensor, mask: Option<&DropoutMask>) -> Result<f64> {
    let mut h = input.clone();
    let mut margin = f64::INFINITY;
    for (i, layer) in p.layers[..p.layers.len() - 1].iter().enumerate() {
        let pre = linear(&h, &layer.weight, &layer.bias)?;
        margin = pre.data().iter().fold(margin, |m, v| m.min(v.abs()));
        h = pre.map(|v| v.max(0.0));
        if let Some(m) = mask {
            h = Tensor::matrix(h.rows(), h.cols(), h.data().iter().zip(m.layers[i].data()).map(|(a, b)| a * b).collect());
        }
    }
    Ok(margin)
}

fn one_hot_rows(states: &[usize], n_states: usize, goals: Option<usize>) -> Tensor {
    let width = n_states + goals.unwrap_or(0);
    let mut data = Vec::new();
    for &s in states {
        match goals {
            None => {
                let mut row = vec![0.0; width];
                row[s] = 1.0;
                data.extend(row);
            }
            Some(g) => {
                for gi in 0..g {
                    let mut row = vec![0.0; width];
                    row[s] = 1.0;
                    row[n_states + gi] = 1.0;
                    data.extend(row);
                }
            }
        }
    }
    Tensor::matrix(data.len() / width, width, data)
}

/// Checks all objectives on `instances` random problems with step `eps`.
pub fn gradient_suite(instances: usize, seed: u64, eps: f64) -> Result<GradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![0.0f64; OBJECTIVES.len()];
    let actions = 2;
    for _ in 0..instances {
        let n_states = rng.random_range(3..=6);
        let g = rng.random_range(2..=4);
        let h = rng.random_range(4..=8);
        let hidden = if rng.random::<bool>() { vec![h] } else { vec![h, h] };
        let s = rng.random_range(1..=3);
        let b = rng.random_range(1..=5);
        let states: Vec<usize> = (0..s).map(|_| rng.random_range(0..n_states)).collect();
        let item_states: Vec<usize> = (0..b).map(|_| rng.random_range(0..s)).collect();
        let item_goals: Vec<usize> = (0..b).map(|_| rng.random_range(0..g)).collect();
        let alpha = rng.random_range(0.05..1.0);
        let tau = rng.random_range(0.3..1.0);

        let ctrl_rows = one_hot_rows(&states, n_states, Some(g));
        let meta_rows = one_hot_rows(&states, n_states, None);
        let item_rows: Vec<usize> = item_states.iter().zip(&item_goals).map(|(k, gi)| k * g + gi).collect();
        let crit_x = Tensor::matrix(b, n_states + g, item_rows.iter().flat_map(|&r| ctrl_rows.row_slice(r).to_vec()).collect());
        let meta_x = Tensor::matrix(b, n_states, item_states.iter().flat_map(|&k| meta_rows.row_slice(k).to_vec()).collect());

        // ReLU is not differentiable at zero; redraw until every unit is at
        // least KINK_MARGIN away so that no central difference straddles a kink.
        let (phi, nu, q1, q2, mask, meta_mask) = loop {
            let phi = random_net(&mut rng, n_states + g, &hidden, actions, Head::Softmax);
            let nu = random_net(&mut rng, n_states, &hidden, g, Head::Softmax);
            let q1 = random_net(&mut rng, n_states + g, &hidden, actions, Head::Linear);
            let q2 = random_net(&mut rng, n_states, &hidden, g, Head::Linear);
            let mask = DropoutMask::sample(b, &hidden, 0.2, &mut rng);
            let meta_mask = DropoutMask::sample(b, &hidden, 0.2, &mut rng);
            let margin = [
                kink_margin(&phi, &ctrl_rows, None)?,
                kink_margin(&nu, &meta_rows, None)?,
                kink_margin(&q1, &crit_x, Some(&mask))?,
                kink_margin(&q2, &meta_x, Some(&meta_mask))?,
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            if margin > KINK_MARGIN {
                break (phi, nu, q1, q2, mask, meta_mask);
            }
        };

        // Critics: dropout-masked regression onto fixed targets.
        let acts: Vec<usize> = (0..b).map(|_| rng.random_range(0..actions)).collect();
        let targets: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst[0] = worst[0].max(grad_check(&q1, eps, |t, sl| q_regression_loss(t, sl, &crit_x, Some(&mask), &acts, &targets))?);

        let meta_targets: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..1.0)).collect();
        worst[3] = worst[3].max(grad_check(&q2, eps, |t, sl| q_regression_loss(t, sl, &meta_x, Some(&meta_mask), &item_goals, &meta_targets))?);

        // Controller policies against the frozen meta policy and critic.
        let q1_items = {
            let all = q1.eval(&ctrl_rows)?;
            Tensor::matrix(b, actions, item_rows.iter().flat_map(|&r| all.row_slice(r).to_vec()).collect())
        };
        let noise = Tensor::matrix(b, actions, (0..b).flat_map(|_| sample_gumbel_noise(actions, &mut rng)).collect());
        let mut c_in = ControllerPolicyInputs {
            rows: ctrl_rows.clone(),
            item_rows: item_rows.clone(),
            item_states: item_states.clone(),
            goal_log_probs: Some(log_softmax_rows(&nu.eval_logits(&meta_rows)?)),
            q_values: q1_items,
            noise: Some(noise),
        };
        for (slot, bonus) in [(1, ControllerBonus::MutualInformation), (2, ControllerBonus::Entropy)] {
            let e = grad_check(&phi, eps, |t, sl| Ok(controller_policy_loss(t, sl, &c_in, bonus, alpha, tau)?.total))?;
            worst[slot] = worst[slot].max(e);
        }
        c_in.noise = None;
        let e = grad_check(&phi, eps, |t, sl| Ok(controller_policy_loss(t, sl, &c_in, ControllerBonus::MutualInformation, alpha, tau)?.total))?;
        worst[6] = worst[6].max(e);

        // Meta policies against the frozen controller policy and critic.
        let q2_items = {
            let all = q2.eval(&meta_rows)?;
            Tensor::matrix(b, g, item_states.iter().flat_map(|&k| all.row_slice(k).to_vec()).collect())
        };
        let m_in = MetaPolicyInputs {
            rows: meta_rows.clone(),
            item_states: item_states.clone(),
            q_values: q2_items,
            action_log_probs: Some(log_softmax_rows(&phi.eval_logits(&ctrl_rows)?)),
            noise: Some(Tensor::matrix(b, g, (0..b).flat_map(|_| sample_gumbel_noise(g, &mut rng)).collect())),
        };
        for (slot, bonus) in [(4, MetaBonus::MutualInformation), (5, MetaBonus::Entropy)] {
            let e = grad_check(&nu, eps, |t, sl| Ok(meta_policy_loss(t, sl, &m_in, bonus, alpha, tau)?.total))?;
            worst[slot] = worst[slot].max(e);
        }
    }
    Ok(GradientReport { instances, worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = gradient_suite(5, 1, 1e-5).unwrap();
        assert_eq!(r.worst.len(), OBJECTIVES.len());
        assert!(r.max_error() < 1e-4, "{:?}", r.worst);
    }
}

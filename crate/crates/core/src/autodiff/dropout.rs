use rand::Rng;

use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Inverted-dropout masks for the hidden layers of one forward pass.
///
/// Kept units are scaled by `1 / keep_prob`, so evaluation mode (no mask) needs
/// no rescaling.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub keep_prob: f64,
    /// One `[batch × width]` mask per hidden layer.
    pub layers: Vec<Tensor>,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(batch: usize, hidden_widths: &[usize], drop_rate: f64, rng: &mut R) -> Self {
        let keep_prob = 1.0 - drop_rate;
        let scale = 1.0 / keep_prob;
        let layers = hidden_widths
            .iter()
            .map(|&w| {
                let data = (0..batch * w).map(|_| if rng.random::<f64>() < keep_prob { scale } else { 0.0 }).collect();
                Tensor::matrix(batch, w, data)
            })
            .collect();
        Self { keep_prob, layers }
    }

    pub(crate) fn check(&self, batch: usize, layer_widths: &[usize]) -> Result<()> {
        let hidden = &layer_widths[..layer_widths.len() - 1];
        if self.layers.len() != hidden.len() {
            return shape_err(format!("dropout mask has {} layers, network has {} hidden", self.layers.len(), hidden.len()));
        }
        for (m, &w) in self.layers.iter().zip(hidden) {
            if m.dims2() != (batch, w) {
                return shape_err(format!("dropout mask {:?} for activations {batch}×{w}", m.shape()));
            }
        }
        Ok(())
    }
}

/// Dropout configuration: `rate` of hidden units dropped while training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    /// `None` when dropout is disabled; the forward pass is then the plain network.
    pub fn mask<R: Rng + ?Sized>(&self, batch: usize, hidden_widths: &[usize], rng: &mut R) -> Option<DropoutMask> {
        (self.rate > 0.0).then(|| DropoutMask::sample(batch, hidden_widths, self.rate, rng))
    }
}

use super::mlp::MlpParams;
use super::tape::{ParamSlot, Tape, Var};
use crate::error::Result;

/// Compares reverse-mode gradients against central finite differences.
///
/// `loss_fn` records a scalar loss on a fresh tape given the slot at which
/// `params` were registered; it is called once for the analytic pass and
/// twice per coordinate. Returns the largest
/// `|analytic − numeric| / max(GRAD_FLOOR, |analytic| + |numeric|)`.
/// Below this combined magnitude the error is effectively absolute. A central
/// difference on an O(1) loss carries about `1e-16 / eps` rounding noise,
/// which would otherwise dominate the ratio for near-zero gradients.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn grad_check<F>(params: &MlpParams, eps: f64, loss_fn: F) -> Result<f64>
where
    F: Fn(&mut Tape, ParamSlot) -> Result<Var>,
{
    let mut tape = Tape::new();
    let slot = tape.register(params);
    let loss = loss_fn(&mut tape, slot)?;
    let analytic = tape.backward_scalar(loss)?.into_slot(slot);

    let eval = |p: &MlpParams| -> Result<f64> {
        let mut t = Tape::new();
        let s = t.register(p);
        let l = loss_fn(&mut t, s)?;
        Ok(t.value(l).scalar_value())
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (ti, grad) in analytic.tensors().into_iter().enumerate() {
        for j in 0..grad.len() {
            let original = probe.tensors()[ti].data()[j];
            probe.tensors_mut()[ti].data_mut()[j] = original + eps;
            let up = eval(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = original - eps;
            let down = eval(&probe)?;
            probe.tensors_mut()[ti].data_mut()[j] = original;

            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::mlp::{forward_slot, Head, Layer};
    use crate::autodiff::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_regression_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MlpParams::new(3, &[], 1, Head::Linear, &mut rng);
        let x = Tensor::matrix(4, 3, vec![1.0, 0.5, -1.0, 0.2, 0.3, 0.9, -0.7, 1.1, 0.0, 0.4, -0.2, 0.6]);
        let y = Tensor::matrix(4, 1, vec![0.3, -1.0, 2.0, 0.5]);

        let loss_fn = |t: &mut Tape, s: ParamSlot| {
            let xi = t.constant(x.clone());
            let fwd = forward_slot(t, s, xi, None)?;
            let target = t.constant(y.clone());
            let d = t.sub(fwd.output, target);
            let sq = t.mul(d, d);
            let total = t.sum(sq);
            Ok(t.scale(total, 0.5))
        };
        let err = grad_check(&net, 1e-5, loss_fn).unwrap();
        assert!(err < 1e-6, "{err}");

        // Closed form: dL/dw = (Xw + b - y)ᵀ X.
        let mut tape = Tape::new();
        let slot = tape.register(&net);
        let loss = loss_fn(&mut tape, slot).unwrap();
        let g = tape.backward_scalar(loss).unwrap().into_slot(slot);
        let w = net.layers[0].weight.data();
        let b = net.layers[0].bias.data()[0];
        for j in 0..3 {
            let mut expected = 0.0;
            for r in 0..4 {
                let pred: f64 = (0..3).map(|k| x.at(r, k) * w[k]).sum::<f64>() + b;
                expected += (pred - y.at(r, 0)) * x.at(r, j);
            }
            assert!((g.layers[0].weight.data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let net = MlpParams::from_layers(
            vec![Layer { weight: Tensor::matrix(1, 2, vec![0.3, 0.4]), bias: Tensor::vector(vec![0.1]) }],
            Head::Linear,
        )
        .unwrap();
        let err = grad_check(&net, 1e-5, |t, _| Ok(t.constant(Tensor::scalar(4.2)))).unwrap();
        assert_eq!(err, 0.0);
    }
}

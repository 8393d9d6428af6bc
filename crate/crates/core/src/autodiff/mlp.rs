use rand::Rng;

use super::dropout::DropoutMask;
use super::tape::{ParamSlot, Tape, Var};
use super::tensor::{linear, softmax_rows, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Linear,
    Softmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[out × in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Fully connected ReLU network with a linear or softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub head: Head,
}

/// Per-layer gradients, laid out like [`MlpParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Output of a recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct MlpForward {
    pub slot: ParamSlot,
    /// Pre-head activations of the last layer.
    pub logits: Var,
    /// Head output: `logits` for a linear head, row-wise softmax otherwise.
    pub output: Var,
}

impl MlpParams {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, head: Head, rng: &mut R) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
                Layer { weight: Tensor::matrix(fan_out, fan_in, w), bias: Tensor::vector(vec![0.0; fan_out]) }
            })
            .collect();
        Self { layers, head }
    }

    /// Builds a network from explicit layers, checking that dimensions compose.
    pub fn from_layers(layers: Vec<Layer>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            let (out, _) = l.weight.dims2();
            if l.weight.shape().len() != 2 || l.bias.len() != out {
                return shape_err(format!("layer {i}: weight {:?}, bias {:?}", l.weight.shape(), l.bias.shape()));
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return shape_err(format!("layer {i} input width does not match layer {} output", i - 1));
            }
        }
        Ok(Self { layers, head })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.weight.rows()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { weight: Tensor::zeros(l.weight.shape()), bias: Tensor::zeros(l.bias.shape()) })
                .collect(),
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.cols() != self.input_width() {
            return shape_err(format!("network expects {} inputs, got {:?}", self.input_width(), input.shape()));
        }
        if !input.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    /// Pre-head output without recording anything and without dropout.
    pub fn eval_logits(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut h = linear(input, &self.layers[0].weight, &self.layers[0].bias)?;
        for layer in &self.layers[1..] {
            h = h.map(|v| v.max(0.0));
            h = linear(&h, &layer.weight, &layer.bias)?;
        }
        Ok(h)
    }

    /// Head output without recording anything and without dropout.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let logits = self.eval_logits(input)?;
        Ok(match self.head {
            Head::Linear => logits,
            Head::Softmax => softmax_rows(&logits),
        })
    }
}

/// Registers `params` on the tape and records a forward pass on `input`.
pub fn forward(params: &MlpParams, input: &Tensor, mask: Option<&DropoutMask>, tape: &mut Tape) -> Result<MlpForward> {
    let slot = tape.register(params);
    let x = tape.constant(input.clone());
    forward_slot(tape, slot, x, mask)
}

/// Records a forward pass through an already registered parameter set.
///
/// Dropout, when a mask is given, is applied after each hidden activation.
pub fn forward_slot(tape: &mut Tape, slot: ParamSlot, input: Var, mask: Option<&DropoutMask>) -> Result<MlpForward> {
    let (layers, head) = {
        let info = tape.slot(slot);
        info.params.check_input(tape.value(input))?;
        (info.layers.clone(), info.params.head)
    };
    if let Some(m) = mask {
        m.check(tape.value(input).rows(), &layers.iter().map(|(w, _)| tape.value(*w).rows()).collect::<Vec<_>>())?;
    }
    let last = layers.len() - 1;
    let mut h = input;
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.linear(h, w, b)?;
        if i < last {
            h = tape.relu(h);
            if let Some(m) = mask {
                h = tape.mul_const(h, m.layers[i].clone());
            }
        }
    }
    let output = match head {
        Head::Linear => h,
        Head::Softmax => tape.softmax(h),
    };
    Ok(MlpForward { slot, logits: h, output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn default_shape_and_init_bounds() {
        let net = MlpParams::new(12, &[256, 256], 6, Head::Softmax, &mut rng());
        assert_eq!(net.hidden_widths(), vec![256, 256]);
        assert_eq!(net.input_width(), 12);
        assert_eq!(net.output_width(), 6);
        let limit = (6.0f64 / (12.0 + 256.0)).sqrt();
        assert!(net.layers[0].weight.data().iter().all(|w| w.abs() <= limit));
        assert!(net.layers.iter().all(|l| l.bias.data().iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn zero_network_softmax_is_uniform() {
        let mut net = MlpParams::new(3, &[4, 4], 5, Head::Softmax, &mut rng());
        for t in net.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = net.eval(&Tensor::row(vec![0.3, -2.0, 7.0])).unwrap();
        for p in out.data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let net = MlpParams::from_layers(vec![Layer { weight: eye, bias: Tensor::vector(vec![0.0; 3]) }], Head::Linear).unwrap();
        let x = Tensor::row(vec![1.5, -2.0, 0.25]);
        let mut tape = Tape::new();
        let fwd = forward(&net, &x, None, &mut tape).unwrap();
        assert_eq!(tape.value(fwd.output).data(), x.data());
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = MlpParams::new(3, &[4], 2, Head::Linear, &mut rng());
        assert!(matches!(net.eval(&Tensor::row(vec![1.0, 2.0])), Err(Error::Shape(_))));
        assert!(matches!(net.eval(&Tensor::row(vec![1.0, f64::NAN, 0.0])), Err(Error::NonFinite(_))));
        let mut tape = Tape::new();
        assert!(forward(&net, &Tensor::row(vec![1.0; 4]), None, &mut tape).is_err());
    }

    #[test]
    fn mismatched_layers_rejected() {
        let l0 = Layer { weight: Tensor::matrix(4, 3, vec![0.0; 12]), bias: Tensor::vector(vec![0.0; 4]) };
        let l1 = Layer { weight: Tensor::matrix(2, 5, vec![0.0; 10]), bias: Tensor::vector(vec![0.0; 2]) };
        assert!(MlpParams::from_layers(vec![l0, l1], Head::Linear).is_err());
    }

    #[test]
    fn tape_forward_equals_eval_bitwise() {
        let net = MlpParams::new(5, &[16, 16], 3, Head::Softmax, &mut rng());
        let x = Tensor::matrix(2, 5, vec![1., 0., 0., 0., 1., 0., 1., 0., 1., 0.]);
        let mut tape = Tape::new();
        let fwd = forward(&net, &x, None, &mut tape).unwrap();
        assert_eq!(tape.value(fwd.output), &net.eval(&x).unwrap());
        assert_eq!(tape.value(fwd.logits), &net.eval_logits(&x).unwrap());
    }

    #[test]
    fn sum_loss_gives_unit_last_bias_grad() {
        let net = MlpParams::new(4, &[8, 8], 3, Head::Linear, &mut rng());
        let x = Tensor::matrix(1, 4, vec![0.5, -1.0, 2.0, 0.1]);
        let mut tape = Tape::new();
        let fwd = forward(&net, &x, None, &mut tape).unwrap();
        let loss = tape.sum(fwd.output);
        let grads = tape.backward_scalar(loss).unwrap();
        assert_eq!(grads.get(fwd.slot).layers[2].bias.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn unused_parameters_get_exact_zero() {
        let used = MlpParams::new(2, &[4], 1, Head::Linear, &mut rng());
        let unused = MlpParams::new(2, &[4], 1, Head::Linear, &mut rng());
        let mut tape = Tape::new();
        let idle = tape.register(&unused);
        let fwd = forward(&used, &Tensor::row(vec![1.0, 2.0]), None, &mut tape).unwrap();
        let loss = tape.sum(fwd.output);
        let grads = tape.backward_scalar(loss).unwrap();
        assert!(grads.get(idle).tensors().iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
        assert!(grads.get(fwd.slot).max_abs() > 0.0);
    }
}

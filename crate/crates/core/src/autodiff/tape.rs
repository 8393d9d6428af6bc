//! Reverse-mode differentiation over dense matrices.
//!
//! Every builder method evaluates its result eagerly and appends a node to
//! the tape. [`Tape::backward`] walks the nodes in reverse once; a tape
//! cannot be replayed a second time.

use super::mlp::{Layer, MlpGrads, MlpParams};
use super::tensor::{gemm, linear, log_softmax_rows, softmax_rows, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a parameter set registered on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamSlot(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    MulConst(Var, Tensor),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SumAll(Var),
    RowSum(Var),
    GatherRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    Reshape(Var),
    LogMixture { logw: Var, logp: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub(crate) struct SlotInfo {
    pub(crate) layers: Vec<(Var, Var)>,
    pub(crate) params: MlpParams,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    slots: Vec<SlotInfo>,
    consumed: bool,
}

/// Gradients for every parameter set registered on a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<MlpGrads>,
}

impl Gradients {
    pub fn get(&self, slot: ParamSlot) -> &MlpGrads {
        &self.slots[slot.0]
    }

    pub fn into_slot(mut self, slot: ParamSlot) -> MlpGrads {
        self.slots.swap_remove(slot.0)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records every weight and bias of `params` as a differentiable leaf.
    pub fn register(&mut self, params: &MlpParams) -> ParamSlot {
        let mut layers = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            let w = self.push(layer.weight.clone(), Op::Leaf, true);
            let b = self.push(layer.bias.clone(), Op::Leaf, true);
            layers.push((w, b));
        }
        self.slots.push(SlotInfo { layers, params: params.clone() });
        ParamSlot(self.slots.len() - 1)
    }

    pub(crate) fn slot(&self, slot: ParamSlot) -> &SlotInfo {
        &self.slots[slot.0]
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = linear(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(y, Op::Relu(x), rg)
    }

    /// Elementwise product with a constant (dropout masks, fixed weights).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), c.len(), "mul_const: {:?} vs {:?}", xv.shape(), c.shape());
        let data = xv.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let y = Tensor::new(xv.shape().to_vec(), data).expect("same length");
        let rg = self.rg(x);
        self.push(y, Op::MulConst(x, c), rg)
    }

    fn zip(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "{name}: shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.zip(a, b, "add", |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.zip(a, b, "sub", |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.zip(a, b, "mul", |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(y, Op::Scale(x, c), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(y, Op::Exp(x), rg)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let y = softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let y = log_softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::LogSoftmax(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(y, Op::SumAll(x), rg)
    }

    /// Sums each row: `[r×c] → [r×1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let rows = xv.rows();
        let data = (0..rows).map(|r| xv.row_slice(r).iter().sum()).collect();
        let y = Tensor::matrix(rows, 1, data);
        let rg = self.rg(x);
        self.push(y, Op::RowSum(x), rg)
    }

    /// Selects rows by index (repeats allowed): `[r×c] → [idx.len()×c]`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(xv.row_slice(i));
        }
        let y = Tensor::matrix(idx.len(), cols, data);
        let rg = self.rg(x);
        self.push(y, Op::GatherRows(x, idx), rg)
    }

    /// Picks one column per row: `y[r] = x[r, idx[r]]`, giving `[r×1]`.
    pub fn select_cols(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), idx.len(), "select_cols: one index per row");
        let data = idx.iter().enumerate().map(|(r, &c)| xv.at(r, c)).collect();
        let y = Tensor::matrix(idx.len(), 1, data);
        let rg = self.rg(x);
        self.push(y, Op::SelectCols(x, idx), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let y = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Reshape(x), rg))
    }

    /// Log-probabilities of per-row mixtures.
    ///
    /// `logw` is `[S×G]` (log mixture weights for each of `S` rows) and `logp`
    /// is `[S·G×A]` (component log-probabilities, grouped by row). Returns
    /// `[S×A]` with `out[k,a] = logsumexp_g(logw[k,g] + logp[k·G+g, a])`.
    pub fn log_mixture(&mut self, logw: Var, logp: Var) -> Result<Var> {
        let (s, g) = self.value(logw).dims2();
        let (sg, a) = self.value(logp).dims2();
        if s * g != sg {
            return shape_err(format!("log_mixture: weights {s}×{g}, components {sg}×{a}"));
        }
        let (w, p) = (self.value(logw), self.value(logp));
        let mut out = vec![0.0; s * a];
        let mut terms = vec![0.0; g];
        for k in 0..s {
            for ai in 0..a {
                for gi in 0..g {
                    terms[gi] = w.at(k, gi) + p.at(k * g + gi, ai);
                }
                out[k * a + ai] = super::tensor::log_sum_exp(&terms);
            }
        }
        let rg = self.rg(logw) || self.rg(logp);
        Ok(self.push(Tensor::matrix(s, a, out), Op::LogMixture { logw, logp }, rg))
    }

    /// Reverse pass from `output`, seeded with `output_grad`.
    pub fn backward(&mut self, output: Var, output_grad: Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage("tape already replayed; record a new forward pass".into()));
        }
        if output_grad.len() != self.value(output).len() {
            return shape_err(format!(
                "output grad {:?} for output {:?}",
                output_grad.shape(),
                self.value(output).shape()
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(output_grad);

        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, g, &mut grads);
        }

        let slots = self
            .slots
            .iter()
            .map(|info| {
                let layers = info
                    .layers
                    .iter()
                    .map(|&(w, b)| Layer {
                        weight: grads[w.0].take().unwrap_or_else(|| Tensor::zeros(self.value(w).shape())),
                        bias: grads[b.0].take().unwrap_or_else(|| Tensor::zeros(self.value(b).shape())),
                    })
                    .collect();
                MlpGrads { layers }
            })
            .collect();
        Ok(Gradients { slots })
    }

    /// Convenience for scalar losses.
    pub fn backward_scalar(&mut self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape().to_vec();
        self.backward(loss, Tensor::filled(&shape, 1.0))
    }

    fn propagate(&self, i: usize, g: Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => {
                    let shape = self.nodes[v.0].value.shape().to_vec();
                    *slot = Some(delta.reshaped(shape).expect("gradient size matches value"));
                }
            }
        };
        match &node.op {
            Op::Leaf => {
                // Parameter leaves keep their gradient for collection.
                acc(Var(i), g);
            }
            Op::Linear { x, w, b } => {
                let (batch, out) = g.dims2();
                let xv = self.value(*x);
                let wv = self.value(*w);
                let inp = xv.cols();
                if self.rg(*x) {
                    let mut dx = vec![0.0; batch * inp];
                    gemm(batch, out, inp, g.data(), out as isize, 1, wv.data(), inp as isize, 1, 0.0, &mut dx);
                    acc(*x, Tensor::matrix(batch, inp, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, batch, inp, g.data(), 1, out as isize, xv.data(), inp as isize, 1, 0.0, &mut dw);
                    acc(*w, Tensor::matrix(out, inp, dw));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; out];
                    for r in 0..batch {
                        for (d, v) in db.iter_mut().zip(g.row_slice(r)) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::vector(db));
                }
            }
            Op::Relu(x) => {
                let y = &node.value;
                let data = g.data().iter().zip(y.data()).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::MulConst(x, c) => {
                let data = g.data().iter().zip(c.data()).map(|(d, m)| d * m).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*b, g.map(|v| -v));
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(d, y)| d * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(d, x)| d * x).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), da).unwrap());
                acc(*b, Tensor::new(g.shape().to_vec(), db).unwrap());
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::Exp(x) => {
                let data = g.data().iter().zip(node.value.data()).map(|(d, y)| d * y).collect();
                acc(*x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Softmax(x) => {
                let p = &node.value;
                let (rows, cols) = p.dims2();
                let mut dx = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let (pr, gr) = (p.row_slice(r), g.row_slice(r));
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(pr.iter().zip(gr).map(|(pi, gi)| pi * (gi - dot)));
                }
                acc(*x, Tensor::matrix(rows, cols, dx));
            }
            Op::LogSoftmax(x) => {
                let lp = &node.value;
                let (rows, cols) = lp.dims2();
                let mut dx = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let (lr, gr) = (lp.row_slice(r), g.row_slice(r));
                    let total: f64 = gr.iter().sum();
                    dx.extend(lr.iter().zip(gr).map(|(l, gi)| gi - l.exp() * total));
                }
                acc(*x, Tensor::matrix(rows, cols, dx));
            }
            Op::SumAll(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, Tensor::filled(&shape, g.scalar_value()));
            }
            Op::RowSum(x) => {
                let (rows, cols) = self.value(*x).dims2();
                let mut dx = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    dx.extend(std::iter::repeat(g.data()[r]).take(cols));
                }
                acc(*x, Tensor::matrix(rows, cols, dx));
            }
            Op::GatherRows(x, idx) => {
                let (rows, cols) = self.value(*x).dims2();
                let mut dx = vec![0.0; rows * cols];
                for (out_r, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        dx[src * cols + c] += g.at(out_r, c);
                    }
                }
                acc(*x, Tensor::matrix(rows, cols, dx));
            }
            Op::SelectCols(x, idx) => {
                let (rows, cols) = self.value(*x).dims2();
                let mut dx = vec![0.0; rows * cols];
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * cols + c] = g.data()[r];
                }
                acc(*x, Tensor::matrix(rows, cols, dx));
            }
            Op::Reshape(x) => acc(*x, g),
            Op::LogMixture { logw, logp } => {
                let (w, p) = (self.value(*logw), self.value(*logp));
                let (s, gn) = w.dims2();
                let a = p.cols();
                let out = &node.value;
                let mut dw = vec![0.0; s * gn];
                let mut dp = vec![0.0; s * gn * a];
                for k in 0..s {
                    for gi in 0..gn {
                        let row = k * gn + gi;
                        for ai in 0..a {
                            let resp = (w.at(k, gi) + p.at(row, ai) - out.at(k, ai)).exp();
                            let d = g.at(k, ai) * resp;
                            dw[k * gn + gi] += d;
                            dp[row * a + ai] += d;
                        }
                    }
                }
                acc(*logw, Tensor::matrix(s, gn, dw));
                acc(*logp, Tensor::matrix(s * gn, a, dp));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Tensor) {
        let mut tape = Tape::new();
        let x = tape.push(x0.clone(), Op::Leaf, true);
        let y = build(&mut tape, x);
        let y = tape.sum(y);
        tape.consumed = false;
        let mut grads: Vec<Option<Tensor>> = (0..tape.nodes.len()).map(|_| None).collect();
        grads[y.0] = Some(Tensor::scalar(1.0));
        for i in (0..=y.0).rev() {
            if !tape.nodes[i].requires_grad {
                continue;
            }
            if let Some(g) = grads[i].take() {
                tape.propagate(i, g, &mut grads);
            }
        }
        let analytic = grads[x.0].clone().unwrap();
        let h = 1e-6;
        for j in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[j] += delta;
                let mut t = Tape::new();
                let v = t.push(xp, Op::Leaf, true);
                let out = build(&mut t, v);
                t.value(out).sum()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[j];
            assert!((a - numeric).abs() < 1e-6 * (1.0 + a.abs()), "coord {j}: {a} vs {numeric}");
        }
    }

    fn sample() -> Tensor {
        Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4])
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        fd_check(|t, x| { let e = t.exp(x); t.mul(e, x) }, sample());
        fd_check(|t, x| { let s = t.scale(x, 3.0); t.sub(s, x) }, sample());
        fd_check(|t, x| { let y = t.mul(x, x); t.add(y, x) }, sample());
        fd_check(|t, x| t.mul_const(x, Tensor::matrix(2, 3, vec![1.0, 0.0, 2.0, 0.5, 1.0, 0.0])), sample());
    }

    #[test]
    fn softmax_family_matches_finite_differences() {
        let weights = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 0.3, 0.9, -1.1]);
        fd_check(|t, x| { let p = t.softmax(x); t.mul_const(p, weights.clone()) }, sample());
        fd_check(|t, x| { let p = t.log_softmax(x); t.mul_const(p, weights.clone()) }, sample());
    }

    #[test]
    fn indexing_ops_match_finite_differences() {
        fd_check(|t, x| { let r = t.gather_rows(x, vec![1, 0, 1]); t.mul(r, r) }, sample());
        fd_check(|t, x| { let c = t.select_cols(x, vec![2, 0]); t.mul(c, c) }, sample());
        fd_check(|t, x| { let r = t.row_sum(x); t.mul(r, r) }, sample());
        fd_check(|t, x| { let r = t.reshape(x, vec![3, 2]).unwrap(); t.mul_const(r, Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.])) }, sample());
    }

    #[test]
    fn log_mixture_matches_finite_differences() {
        // Two rows, two components each, three outcomes.
        let comps = Tensor::matrix(4, 3, vec![0.2, -0.5, 1.0, 0.0, 0.3, -0.2, 1.5, 0.1, 0.0, -1.0, 0.4, 0.9]);
        let weights = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 0.3, 0.9, -1.1]);
        fd_check(
            |t, x| {
                let lw = t.log_softmax(x);
                let lp_raw = t.constant(comps.clone());
                let lp = t.log_softmax(lp_raw);
                let m = t.log_mixture(lw, lp).unwrap();
                t.mul_const(m, weights.clone())
            },
            Tensor::matrix(2, 2, vec![0.4, -0.3, 1.1, 0.2]),
        );
        fd_check(
            |t, x| {
                let lw_raw = t.constant(Tensor::matrix(2, 2, vec![0.4, -0.3, 1.1, 0.2]));
                let lw = t.log_softmax(lw_raw);
                let lp = t.log_softmax(x);
                let m = t.log_mixture(lw, lp).unwrap();
                t.mul_const(m, weights.clone())
            },
            comps.clone(),
        );
    }

    #[test]
    fn backward_twice_is_a_usage_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1.0));
        let y = tape.scale(x, 2.0);
        assert!(tape.backward_scalar(y).is_ok());
        assert!(matches!(tape.backward_scalar(y), Err(Error::Usage(_))));
    }
}

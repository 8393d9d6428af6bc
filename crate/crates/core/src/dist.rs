//! Categorical distributions, entropy and conditional mutual information.
//!
//! Everything is in nats. The `*_var` functions build the same quantities on
//! a [`Tape`] from log-probabilities so that gradients flow to network
//! logits.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::autodiff::{softmax_rows, Tape, Tensor, Var};
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no outcomes".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entries must be finite and nonnegative: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Self::new(softmax_rows(&Tensor::row(logits.to_vec())).into_data())
    }

    pub fn uniform(k: usize) -> Self {
        Self { probs: vec![1.0 / k as f64; k] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left a sliver above the cumulative sum.
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

/// Meta policy over goals plus one controller action distribution per goal,
/// all at a single state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    pub goal_dist: CategoricalDist,
    pub action_dists: Vec<CategoricalDist>,
}

impl PolicyTable {
    pub fn new(goal_dist: CategoricalDist, action_dists: Vec<CategoricalDist>) -> Result<Self> {
        if action_dists.len() != goal_dist.len() {
            return Err(Error::Shape(format!(
                "{} goals but {} action rows",
                goal_dist.len(),
                action_dists.len()
            )));
        }
        let k = action_dists[0].len();
        if action_dists.iter().any(|d| d.len() != k) {
            return Err(Error::Shape("action rows differ in size".into()));
        }
        Ok(Self { goal_dist, action_dists })
    }

    pub fn num_actions(&self) -> usize {
        self.action_dists[0].len()
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 { p * p.ln() } else { 0.0 }
}

pub fn entropy(d: &CategoricalDist) -> f64 {
    -d.probs.iter().map(|&p| plogp(p)).sum::<f64>()
}

/// `π_a(a) = Σ_g π_g(g) · π_ag(a | g)`.
pub fn marginal_action_dist(t: &PolicyTable) -> CategoricalDist {
    let mut m = vec![0.0; t.num_actions()];
    for (w, row) in t.goal_dist.probs.iter().zip(&t.action_dists) {
        for (mi, p) in m.iter_mut().zip(&row.probs) {
            *mi += w * p;
        }
    }
    CategoricalDist { probs: m }
}

/// `E_g[H(π_ag(·|g))]` under the goal distribution.
pub fn conditional_entropy(t: &PolicyTable) -> f64 {
    t.goal_dist.probs.iter().zip(&t.action_dists).map(|(w, row)| w * entropy(row)).sum()
}

/// `I(a; g) = H(π_a) − E_g[H(π_ag)]`.
pub fn mutual_information(t: &PolicyTable) -> f64 {
    entropy(&marginal_action_dist(t)) - conditional_entropy(t)
}

pub fn log_prob(d: &CategoricalDist, index: usize) -> Result<f64> {
    let p = *d
        .probs
        .get(index)
        .ok_or_else(|| Error::Shape(format!("index {index} out of {}", d.len())))?;
    if p == 0.0 {
        return Err(Error::InvalidDistribution(format!("outcome {index} has zero probability")));
    }
    Ok(p.ln())
}

/// Log-probability straight from logits via log-sum-exp.
pub fn log_prob_from_logits(logits: &[f64], index: usize) -> Result<f64> {
    if index >= logits.len() {
        return Err(Error::Shape(format!("index {index} out of {}", logits.len())));
    }
    Ok(logits[index] - crate::autodiff::log_sum_exp(logits))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSample {
    pub soft: Vec<f64>,
    pub hard_index: usize,
}

pub fn sample_gumbel_noise<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let g = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    (0..k).map(|_| g.sample(rng)).collect()
}

/// Relaxed one-hot `softmax((logits + noise) / tau)` for given noise.
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64) -> Result<GumbelSample> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("Gumbel temperature must be positive, got {tau}")));
    }
    if logits.len() != noise.len() {
        return Err(Error::Shape(format!("{} logits, {} noise draws", logits.len(), noise.len())));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    let soft = softmax_rows(&Tensor::row(perturbed.clone())).into_data();
    let hard_index = argmax(&perturbed);
    Ok(GumbelSample { soft, hard_index })
}

pub fn gumbel_softmax_sample<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Result<GumbelSample> {
    let noise = sample_gumbel_noise(logits.len(), rng);
    gumbel_softmax_with_noise(logits, &noise, tau)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Row entropies from row log-probabilities: `[r×k] → [r×1]`.
pub fn entropy_var(tape: &mut Tape, logp: Var) -> Var {
    let p = tape.exp(logp);
    let plogp = tape.mul(p, logp);
    let s = tape.row_sum(plogp);
    tape.scale(s, -1.0)
}

/// Mutual information for `S` states at once.
///
/// `logw` is `[S×G]` (log goal probabilities per state) and `logp` is
/// `[S·G×A]` (log action probabilities, goal-major within each state).
/// Returns `[S×1]`.
pub fn mutual_information_var(tape: &mut Tape, logw: Var, logp: Var) -> Result<Var> {
    let (s, g) = tape.value(logw).dims2();
    let log_marginal = tape.log_mixture(logw, logp)?;
    let h_marginal = entropy_var(tape, log_marginal);
    let h_rows = entropy_var(tape, logp);
    let h_rows = tape.reshape(h_rows, vec![s, g])?;
    let w = tape.exp(logw);
    let weighted = tape.mul(w, h_rows);
    let h_conditional = tape.row_sum(weighted);
    Ok(tape.sub(h_marginal, h_conditional))
}

/// Differentiable relaxed sample for fixed noise: `softmax((logits + noise) / tau)`.
pub fn gumbel_softmax_var(tape: &mut Tape, logits: Var, noise: Tensor, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("Gumbel temperature must be positive, got {tau}")));
    }
    let n = tape.constant(noise);
    let z = tape.add(logits, n);
    let z = tape.scale(z, 1.0 / tau);
    Ok(tape.softmax(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::log_softmax_rows;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cat(p: &[f64]) -> CategoricalDist {
        CategoricalDist::new(p.to_vec()).unwrap()
    }

    fn table(w: &[f64], rows: &[&[f64]]) -> PolicyTable {
        PolicyTable::new(cat(w), rows.iter().map(|r| cat(r)).collect()).unwrap()
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(CategoricalDist::new(vec![0.5, 0.6]).is_err());
        assert!(CategoricalDist::new(vec![-0.1, 1.1]).is_err());
        assert!(CategoricalDist::new(vec![f64::NAN, 1.0]).is_err());
        assert!(CategoricalDist::new(vec![]).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&cat(&[0.5, 0.5])) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&cat(&[1.0, 0.0])), 0.0);
        // −(0.25 ln 0.25 + 0.75 ln 0.75)
        assert!((entropy(&cat(&[0.25, 0.75])) - 0.562335).abs() < 1e-6);
    }

    #[test]
    fn marginal_examples() {
        let t = table(&[1.0, 0.0], &[&[0.3, 0.7], &[0.9, 0.1]]);
        assert_eq!(marginal_action_dist(&t).probs(), &[0.3, 0.7]);
        let t = table(&[0.5, 0.5], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(marginal_action_dist(&t).probs(), &[0.5, 0.5]);
        let t = table(&[0.3, 0.7], &[&[0.9, 0.1], &[0.2, 0.8]]);
        let m = marginal_action_dist(&t);
        assert!((m.probs()[0] - 0.41).abs() < 1e-15 && (m.probs()[1] - 0.59).abs() < 1e-15);
    }

    #[test]
    fn marginal_rejects_ragged_rows() {
        assert!(PolicyTable::new(cat(&[0.5, 0.5]), vec![cat(&[1.0]), cat(&[0.5, 0.5])]).is_err());
        assert!(PolicyTable::new(cat(&[0.5, 0.5]), vec![cat(&[1.0, 0.0])]).is_err());
    }

    #[test]
    fn mutual_information_examples() {
        let t = table(&[0.2, 0.8], &[&[0.6, 0.4], &[0.6, 0.4]]);
        assert!(mutual_information(&t).abs() < 1e-15);
        let t = table(&[0.5, 0.5], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((mutual_information(&t) - 2f64.ln()).abs() < 1e-15);
        // ln 2 − H(0.9, 0.1) = 0.693147 − 0.325083
        let t = table(&[0.5, 0.5], &[&[0.9, 0.1], &[0.1, 0.9]]);
        assert!((mutual_information(&t) - 0.368064).abs() < 1e-6);
    }

    #[test]
    fn log_prob_examples() {
        assert!((log_prob(&CategoricalDist::uniform(4), 3).unwrap() + 4f64.ln()).abs() < 1e-15);
        assert_eq!(log_prob(&cat(&[1.0, 0.0]), 0).unwrap(), 0.0);
        assert!(matches!(log_prob(&cat(&[1.0, 0.0]), 1), Err(Error::InvalidDistribution(_))));
        assert!(log_prob(&cat(&[1.0, 0.0]), 2).is_err());
    }

    #[test]
    fn log_prob_from_logits_matches_log_of_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-4.0..4.0)).collect();
            let d = CategoricalDist::from_logits(&logits).unwrap();
            for i in 0..5 {
                let direct = d.probs()[i].ln();
                assert!((log_prob_from_logits(&logits, i).unwrap() - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gumbel_soft_sample_is_interior_simplex_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let s = gumbel_softmax_sample(&[0.2, -1.0, 3.0], 0.3, &mut rng).unwrap();
            assert!((s.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.soft.iter().all(|p| *p >= 0.0 && *p <= 1.0));
            assert_eq!(s.hard_index, argmax(&s.soft));
        }
    }

    #[test]
    fn gumbel_rejects_bad_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(gumbel_softmax_sample(&[0.0, 0.0], 0.0, &mut rng).is_err());
        assert!(gumbel_softmax_sample(&[0.0, 0.0], -1.0, &mut rng).is_err());
    }

    #[test]
    fn gumbel_low_temperature_approaches_one_hot() {
        let noise = [0.3, -0.2, 1.1];
        let logits = [1.0, 2.0, 0.5];
        let s = gumbel_softmax_with_noise(&logits, &noise, 0.01).unwrap();
        assert_eq!(s.hard_index, 1);
        assert!(s.soft[1] > 1.0 - 1e-6);
    }

    #[test]
    fn gumbel_hard_index_is_fair_for_equal_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let ones = (0..n).filter(|_| gumbel_softmax_sample(&[0.0, 0.0], 0.3, &mut rng).unwrap().hard_index == 1).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn tape_mutual_information_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (s, g, a) = (3, 4, 2);
        let wl = Tensor::matrix(s, g, (0..s * g).map(|_| rng.random_range(-2.0..2.0)).collect());
        let pl = Tensor::matrix(s * g, a, (0..s * g * a).map(|_| rng.random_range(-2.0..2.0)).collect());
        let mut tape = Tape::new();
        let logw = tape.constant(log_softmax_rows(&wl));
        let logp = tape.constant(log_softmax_rows(&pl));
        let mi = mutual_information_var(&mut tape, logw, logp).unwrap();
        for k in 0..s {
            let goal = CategoricalDist::from_logits(wl.row_slice(k)).unwrap();
            let rows = (0..g).map(|gi| CategoricalDist::from_logits(pl.row_slice(k * g + gi)).unwrap()).collect();
            let t = PolicyTable::new(goal, rows).unwrap();
            assert!((tape.value(mi).data()[k] - mutual_information(&t)).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_frequencies_follow_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = cat(&[0.9, 0.1]);
        let zeros = (0..10_000).filter(|_| d.sample(&mut rng) == 0).count();
        assert!((zeros as f64 / 10_000.0 - 0.9).abs() < 0.01);
    }
}

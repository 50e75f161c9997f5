//! Gaussian, Bernoulli, and categorical log-probabilities, the analytic KL
//! against the standard normal, and reparameterized sampling.
//!
//! Plain-number versions operate on owned values; `graph_*` variants build
//! the same quantities as differentiable subgraphs. The graph variants take
//! the Gaussian log-variance rather than the variance, matching how the
//! posterior network parameterizes it.

use thiserror::Error;

use crate::graph::{Graph, TensorError, TensorId};

/// Clamp applied to Bernoulli probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

#[derive(Debug, Error)]
pub enum DistError {
    #[error("gaussian: dimension mismatch, mean has {mean} entries, variance has {var}")]
    DimMismatch { mean: usize, var: usize },
    #[error("gaussian: non-positive variance {0}")]
    NonPositiveVariance(f64),
    #[error("bernoulli: probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("bernoulli: outcome must be 0 or 1, got {0}")]
    BadOutcome(u8),
    #[error("categorical: needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("categorical: class {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    LenMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Diagonal Gaussian with strictly positive per-coordinate variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self, DistError> {
        if mean.len() != var.len() {
            return Err(DistError::DimMismatch { mean: mean.len(), var: var.len() });
        }
        if let Some(&v) = var.iter().find(|v| **v <= 0.0) {
            return Err(DistError::NonPositiveVariance(v));
        }
        Ok(Self { mean, var })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliP {
    pub p: f64,
}

impl BernoulliP {
    pub fn new(p: f64) -> Result<Self, DistError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(DistError::BadProbability(p));
        }
        Ok(Self { p })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalLogits {
    pub logits: Vec<f64>,
}

impl CategoricalLogits {
    pub fn new(logits: Vec<f64>) -> Result<Self, DistError> {
        if logits.len() < 2 {
            return Err(DistError::TooFewClasses(logits.len()));
        }
        Ok(Self { logits })
    }

    pub fn classes(&self) -> usize {
        self.logits.len()
    }

    pub fn probs(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / denom).collect()
    }

    /// Expectation of the class index.
    pub fn expected_class(&self) -> f64 {
        self.probs()
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    pub fn argmax(&self) -> usize {
        self.logits
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }
}

pub fn gaussian_log_prob(z: &[f64], g: &DiagGaussian) -> Result<f64, DistError> {
    if z.len() != g.dim() {
        return Err(DistError::LenMismatch { expected: g.dim(), got: z.len() });
    }
    let mut lp = 0.0;
    for j in 0..z.len() {
        let d = z[j] - g.mean[j];
        lp += -0.5 * (LN_2PI + g.var[j].ln()) - d * d / (2.0 * g.var[j]);
    }
    Ok(lp)
}

/// KL(g || N(0, I)) = sum_j 0.5 (mu^2 + var - 1 - ln var).
pub fn kl_vs_standard_normal(g: &DiagGaussian) -> f64 {
    g.mean
        .iter()
        .zip(&g.var)
        .map(|(&m, &v)| 0.5 * (m * m + v - 1.0 - v.ln()))
        .sum()
}

pub fn bernoulli_log_prob(t: u8, b: &BernoulliP) -> Result<f64, DistError> {
    if t > 1 {
        return Err(DistError::BadOutcome(t));
    }
    let p = b.p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(if t == 1 { p.ln() } else { (1.0 - p).ln() })
}

pub fn categorical_log_prob(y: usize, c: &CategoricalLogits) -> Result<f64, DistError> {
    if y >= c.classes() {
        return Err(DistError::ClassOutOfRange { index: y, classes: c.classes() });
    }
    let max = c.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + c.logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(c.logits[y] - lse)
}

/// z = mu + sqrt(var) * eps.
pub fn reparam_sample(g: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>, DistError> {
    if eps.len() != g.dim() {
        return Err(DistError::LenMismatch { expected: g.dim(), got: eps.len() });
    }
    Ok(g.mean
        .iter()
        .zip(&g.var)
        .zip(eps)
        .map(|((&m, &v), &e)| m + v.sqrt() * e)
        .collect())
}

// ---- graph-level (differentiable) variants ----

/// Gaussian log-density of `z` under (mu, exp(log_var)), summed over
/// coordinates.
pub fn graph_gaussian_log_prob(
    g: &mut Graph,
    z: TensorId,
    mu: TensorId,
    log_var: TensorId,
) -> Result<TensorId, TensorError> {
    let d = g.shape(z)[0] as f64;
    let diff = g.sub(z, mu)?;
    let sq = g.mul(diff, diff)?;
    let neg_lv = g.neg(log_var);
    let inv_var = g.exp(neg_lv);
    let quad = g.mul(sq, inv_var)?;
    let inner = g.add(log_var, quad)?;
    let s = g.sum(inner);
    let s = g.scale(s, -0.5);
    Ok(g.add_scalar(s, -0.5 * d * LN_2PI))
}

/// Analytic KL((mu, exp(log_var)) || N(0, I)).
pub fn graph_kl_vs_standard_normal(
    g: &mut Graph,
    mu: TensorId,
    log_var: TensorId,
) -> Result<TensorId, TensorError> {
    let d = g.shape(mu)[0] as f64;
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(log_var);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, log_var)?;
    let s = g.sum(b);
    let s = g.scale(s, 0.5);
    Ok(g.add_scalar(s, -0.5 * d))
}

/// log Bernoulli(t | sigmoid(logit)), via softplus for stability:
/// t=1 -> -softplus(-l), t=0 -> -softplus(l).
pub fn graph_bernoulli_log_prob_logit(
    g: &mut Graph,
    t: u8,
    logit: TensorId,
) -> Result<TensorId, TensorError> {
    let arg = if t == 1 { g.neg(logit) } else { logit };
    let sp = g.softplus(arg);
    let sp = g.sum(sp); // logit is a 1-element tensor
    Ok(g.neg(sp))
    }

/// log softmax(logits)[y].
pub fn graph_categorical_log_prob(
    g: &mut Graph,
    y: usize,
    logits: TensorId,
) -> Result<TensorId, TensorError> {
    let picked = g.index(logits, y)?;
    let lse = g.logsumexp(logits)?;
    g.sub(picked, lse)
}

/// z = mu + exp(log_var / 2) * eps with eps held constant.
pub fn graph_reparam_sample(
    g: &mut Graph,
    mu: TensorId,
    log_var: TensorId,
    eps: &[f64],
) -> Result<TensorId, TensorError> {
    let e = g.constant(eps.to_vec(), vec![eps.len()])?;
    let half_lv = g.scale(log_var, 0.5);
    let std = g.exp(half_lv);
    let noise = g.mul(std, e)?;
    g.add(mu, noise)
}

//! Score-function gradient estimators.
//!
//! For a Bernoulli parameterized by `p = sigmoid(theta)` (or a categorical
//! parameterized by `p = softmax(theta)`) the score is
//! `grad_theta log p(x) = x - p`, so every estimator here returns a gradient
//! with respect to the logits `theta`. [`GradientSpace`] tags the result and
//! [`prob_to_logit`] / [`softmax_prob_to_logit`] convert genuine
//! probability-space derivatives (such as `dE/dp = f(1) - f(0)`).

use rand::Rng;

use crate::error::{Error, Result};
use crate::prob_core::{empirical_mean, CategoricalRow, ProbVector, SampleMatrix};
use crate::sampler::{db_sample_bernoulli_with, db_sample_categorical_with, SamplerConfig};

/// An objective `f` evaluated on one sample row.
pub trait Objective {
    fn eval(&self, x: &[u8]) -> f64;
}

impl<F: Fn(&[u8]) -> f64> Objective for F {
    fn eval(&self, x: &[u8]) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSpace {
    /// Derivative with respect to the probabilities.
    Prob,
    /// Derivative with respect to the logits.
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub space: GradientSpace,
    pub estimator: &'static str,
    pub n: usize,
    /// Correction factor of the sampler that produced the batch, if known.
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
}

impl GradientEstimate {
    fn logit(grad: Vec<f64>, estimator: &'static str, n: usize) -> Self {
        Self { grad, space: GradientSpace::Logit, estimator, n, alpha: None, seed: None }
    }
}

fn check_batch(samples: &SampleMatrix, p: &[f64], min_n: usize) -> Result<()> {
    if samples.width() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: samples.width() });
    }
    if samples.n() < min_n {
        if samples.n() == 0 {
            return Err(Error::EmptySamples);
        }
        return Err(Error::TooFewSamples { required: min_n, got: samples.n() });
    }
    Ok(())
}

fn evaluate<F: Objective + ?Sized>(samples: &SampleMatrix, f: &F) -> Vec<f64> {
    samples.rows().map(|row| f.eval(row)).collect()
}

/// Reinforce: `(1/n) sum_i f(x_i) (x_i - p)`.
pub fn reinforce<F: Objective + ?Sized>(samples: &SampleMatrix, p: &[f64], f: &F) -> Result<GradientEstimate> {
    check_batch(samples, p, 1)?;
    let n = samples.n();
    let mut grad = vec![0.0; p.len()];
    for (row, fx) in samples.rows().zip(evaluate(samples, f)) {
        for ((g, &x), &pk) in grad.iter_mut().zip(row).zip(p) {
            *g += fx * (f64::from(x) - pk);
        }
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok(GradientEstimate::logit(grad, "reinforce", n))
}

/// Leave-one-out Reinforce:
/// `(1/n) sum_i (f(x_i) - mean_{j != i} f(x_j)) (x_i - p)`.
pub fn loorf<F: Objective + ?Sized>(samples: &SampleMatrix, p: &[f64], f: &F) -> Result<GradientEstimate> {
    check_batch(samples, p, 2)?;
    loorf_values(samples, p, &evaluate(samples, f))
}

/// LOORF from objective values already computed for each row, for callers
/// whose objective is not a function of the row alone (a table lookup that
/// also fills in fixed coordinates, say).
pub fn loorf_values(samples: &SampleMatrix, p: &[f64], fs: &[f64]) -> Result<GradientEstimate> {
    check_batch(samples, p, 2)?;
    if fs.len() != samples.n() {
        return Err(Error::DimensionMismatch { expected: samples.n(), got: fs.len() });
    }
    let n = samples.n();
    let total: f64 = fs.iter().sum();
    let mut grad = vec![0.0; p.len()];
    for (row, &fx) in samples.rows().zip(fs) {
        let centered = fx - (total - fx) / (n - 1) as f64;
        for ((g, &x), &pk) in grad.iter_mut().zip(row).zip(p) {
            *g += centered * (f64::from(x) - pk);
        }
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok(GradientEstimate::logit(grad, "loorf", n))
}

/// LOORF written as a Reinforce term minus a discrepancy correction:
/// `1/(n-1) sum_i f(x_i)(x_i - p) - (p̂ - p) 1/(n-1) sum_i f(x_i)`.
pub fn loorf_decomposed<F: Objective + ?Sized>(
    samples: &SampleMatrix,
    p: &[f64],
    f: &F,
) -> Result<GradientEstimate> {
    check_batch(samples, p, 2)?;
    let n = samples.n();
    let scale = 1.0 / (n - 1) as f64;
    let fs = evaluate(samples, f);
    let mut reinforce_term = vec![0.0; p.len()];
    for (row, &fx) in samples.rows().zip(&fs) {
        for ((g, &x), &pk) in reinforce_term.iter_mut().zip(row).zip(p) {
            *g += fx * (f64::from(x) - pk);
        }
    }
    let f_sum: f64 = fs.iter().sum();
    let p_hat = empirical_mean(samples)?;
    let grad = reinforce_term
        .iter()
        .zip(p_hat.iter().zip(p))
        .map(|(&r, (&ph, &pk))| scale * r - (ph - pk) * scale * f_sum)
        .collect();
    Ok(GradientEstimate::logit(grad, "loorf-decomposed", n))
}

/// LOORF as a mean over pairs: `1/(n(n-1)) sum_{i<j} (f(x_i) - f(x_j))(x_i - x_j)`.
pub fn loorf_pairwise<F: Objective + ?Sized>(
    samples: &SampleMatrix,
    p: &[f64],
    f: &F,
) -> Result<GradientEstimate> {
    check_batch(samples, p, 2)?;
    let n = samples.n();
    let fs = evaluate(samples, f);
    let mut grad = vec![0.0; p.len()];
    for i in 0..n {
        for j in i + 1..n {
            let df = fs[i] - fs[j];
            for ((g, &xi), &xj) in grad.iter_mut().zip(samples.row(i)).zip(samples.row(j)) {
                *g += df * (f64::from(xi) - f64::from(xj));
            }
        }
    }
    let scale = 1.0 / (n * (n - 1)) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(GradientEstimate::logit(grad, "loorf-pairwise", n))
}

/// DBsurf: LOORF on a batch drawn by the discrepancy-based Bernoulli sampler.
pub fn dbsurf<F: Objective + ?Sized>(p: &ProbVector, f: &F, cfg: &SamplerConfig) -> Result<GradientEstimate> {
    cfg.validate()?;
    let mut est = dbsurf_with(p, f, cfg.alpha, cfg.n, &mut cfg.rng())?;
    est.seed = Some(cfg.seed);
    Ok(est)
}

pub fn dbsurf_with<F: Objective + ?Sized, R: Rng + ?Sized>(
    p: &ProbVector,
    f: &F,
    alpha: f64,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate> {
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: n });
    }
    let samples = db_sample_bernoulli_with(p, alpha, n, rng);
    let mut est = loorf(&samples, p.values(), f)?;
    est.estimator = "dbsurf";
    est.alpha = Some(alpha);
    Ok(est)
}

/// DBsurf over independent categorical slots; `f` sees the concatenated
/// one-hot row and the gradient is laid out the same way.
pub fn dbsurf_categorical<F: Objective + ?Sized>(
    rows: &[CategoricalRow],
    f: &F,
    cfg: &SamplerConfig,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    if cfg.n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: cfg.n });
    }
    let samples = db_sample_categorical_with(rows, cfg.alpha, cfg.n, &mut cfg.rng());
    let p: Vec<f64> = rows.iter().flat_map(|r| r.values().iter().copied()).collect();
    let mut est = loorf(&samples, &p, f)?;
    est.estimator = "dbsurf";
    est.alpha = Some(cfg.alpha);
    est.seed = Some(cfg.seed);
    Ok(est)
}

/// Two-sample, one-dimensional estimator
/// `p(1-p)/kappa (f(x1) - f(x2))(x1 - x2)`, unbiased under a pair law `q`
/// when `kappa = q(1,0) + q(0,1)`.
pub fn kappa_unbiased_estimator<F: Objective + ?Sized>(x1: u8, x2: u8, p: f64, f: &F, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::NonPositiveKappa(kappa));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability { index: 0, value: p });
    }
    let df = f.eval(&[x1]) - f.eval(&[x2]);
    Ok(p * (1.0 - p) / kappa * df * (f64::from(x1) - f64::from(x2)))
}

/// Multiplicative factor `n(n-1) p(1-p) / sum_{i<j} (mu_i + mu_j - 2 mu_i S_ij)`
/// that makes one-dimensional LOORF unbiased under a dependent sampling law
/// with marginals `mus` and conditionals `S_ij = P(x_j = 1 | x_i = 1)`.
pub fn debias_factor(p: f64, mus: &[f64], s: &[Vec<f64>]) -> Result<f64> {
    let n = mus.len();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, got: n });
    }
    if s.len() != n || s.iter().any(|row| row.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: s.len() });
    }
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if let Some(i) = mus.iter().position(|&m| !in_unit(m)) {
        return Err(Error::InvalidProbability { index: i, value: mus[i] });
    }
    let mut denom = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if !in_unit(s[i][j]) {
                return Err(Error::InvalidProbability { index: i * n + j, value: s[i][j] });
            }
            denom += mus[i] + mus[j] - 2.0 * mus[i] * s[i][j];
        }
    }
    if !(denom > 0.0) {
        return Err(Error::DegenerateDebias(denom));
    }
    Ok((n * (n - 1)) as f64 * p * (1.0 - p) / denom)
}

/// Applies [`debias_factor`] to a one-dimensional LOORF estimate.
pub fn debias_1d(estimate: &GradientEstimate, p: f64, mus: &[f64], s: &[Vec<f64>]) -> Result<GradientEstimate> {
    if estimate.grad.len() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: estimate.grad.len() });
    }
    if mus.len() != estimate.n {
        return Err(Error::DimensionMismatch { expected: estimate.n, got: mus.len() });
    }
    let factor = debias_factor(p, mus, s)?;
    Ok(GradientEstimate {
        grad: vec![estimate.grad[0] * factor],
        estimator: "dbsurf-debiased",
        ..estimate.clone()
    })
}

/// Sigmoid chain rule: `dE/dtheta = dE/dp * p (1 - p)`.
pub fn prob_to_logit(grad_p: &[f64], p: &[f64]) -> Vec<f64> {
    grad_p.iter().zip(p).map(|(g, q)| g * q * (1.0 - q)).collect()
}

/// Softmax chain rule for one row: `J^T g = p * (g - <p, g>)`.
pub fn softmax_prob_to_logit(grad_p: &[f64], p: &[f64]) -> Vec<f64> {
    let dot: f64 = grad_p.iter().zip(p).map(|(g, q)| g * q).sum();
    grad_p.iter().zip(p).map(|(g, q)| q * (g - dot)).collect()
}

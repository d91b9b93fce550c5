//! Exact reference computations.
//!
//! The sampler runs independently per dimension, so the law of a batch is the
//! product of one-dimensional path laws. A one-dimensional path law lives on
//! `{0,1}^n` and is computed here by walking the binary tree of outcomes and
//! replaying the sampler's own update arithmetic at every branch. The count
//! recursion in [`nu_recursion`] derives the law of `p̂_n` a second,
//! independent way.

use crate::error::{Error, Result};
use crate::estimators::{debias_factor, loorf, reinforce, Objective};
use crate::prob_core::{running_mean, CategoricalRow, Layout, SampleMatrix};
use crate::sampler::{categorical_q, corrected_prob};

/// Longest one-dimensional path that [`enumerate_path_law`] accepts.
pub const MAX_PATH_LENGTH: usize = 20;

/// Upper bound on outcomes for any joint enumeration.
pub const MAX_OUTCOMES: u128 = 1 << 20;

fn guard(what: &'static str, size: u128) -> Result<()> {
    if size > MAX_OUTCOMES {
        return Err(Error::TooLarge { what, size, limit: MAX_OUTCOMES });
    }
    Ok(())
}

fn check_unit(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability { index: 0, value: p });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::InvalidParameter(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

/// `d/dtheta E[f(x)] = (f(1) - f(0)) p (1 - p)` for `x ~ Bernoulli(sigmoid(theta))`.
pub fn exact_gradient<F: Objective + ?Sized>(p: f64, f: &F) -> f64 {
    (f.eval(&[1]) - f.eval(&[0])) * p * (1.0 - p)
}

/// `d/dp E[f(x)] = f(1) - f(0)`.
pub fn exact_prob_derivative<F: Objective + ?Sized>(f: &F) -> f64 {
    f.eval(&[1]) - f.eval(&[0])
}

/// Exact law of one dimension's outcome sequence. Bit `i` of an outcome index
/// holds `x_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLaw {
    p: f64,
    alpha: f64,
    n: usize,
    probs: Vec<f64>,
}

impl PathLaw {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Probability of the outcome sequence encoded by `mask`.
    pub fn prob(&self, mask: usize) -> f64 {
        self.probs[mask]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of an explicit outcome sequence.
    pub fn prob_of(&self, outcomes: &[u8]) -> f64 {
        assert_eq!(outcomes.len(), self.n);
        let mask = outcomes.iter().enumerate().fold(0, |m, (i, &x)| m | (usize::from(x) << i));
        self.probs[mask]
    }

    /// Outcome `x_{i+1}` of sequence `mask`.
    pub fn outcome(mask: usize, i: usize) -> u8 {
        ((mask >> i) & 1) as u8
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Sequences with positive probability.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().copied().enumerate().filter(|&(_, w)| w > 0.0)
    }
}

/// Enumerates all `2^n` outcome sequences of the one-dimensional sampler.
pub fn enumerate_path_law(p: f64, alpha: f64, n: usize) -> Result<PathLaw> {
    check_unit(p)?;
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::InvalidParameter("path length must be at least 1".into()));
    }
    if n > MAX_PATH_LENGTH {
        return Err(Error::TooLarge {
            what: "path enumeration length",
            size: n as u128,
            limit: MAX_PATH_LENGTH as u128,
        });
    }
    let mut probs = vec![0.0; 1 << n];
    walk(p, alpha, n, 0, 0, p, p, 1.0, &mut probs);
    Ok(PathLaw { p, alpha, n, probs })
}

#[allow(clippy::too_many_arguments)]
fn walk(p: f64, alpha: f64, n: usize, depth: usize, mask: usize, p_hat: f64, q: f64, mass: f64, out: &mut [f64]) {
    if depth == n {
        out[mask] = mass;
        return;
    }
    for x in 0..2u8 {
        let branch = if x == 1 { q } else { 1.0 - q };
        if branch <= 0.0 {
            continue;
        }
        let next_hat = running_mean(p_hat, f64::from(x), depth + 1);
        let next_q = corrected_prob(p, alpha, next_hat);
        walk(p, alpha, n, depth + 1, mask | (usize::from(x) << depth), next_hat, next_q, mass * branch, out);
    }
}

/// Law of the running count: `row(m)[k] = P(p̂_m = k/m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuTable {
    rows: Vec<Vec<f64>>,
}

impl NuTable {
    /// Row for `m` draws, `1 <= m <= n`.
    pub fn row(&self, m: usize) -> &[f64] {
        &self.rows[m]
    }

    pub fn n(&self) -> usize {
        self.rows.len() - 1
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Forward recursion
/// `nu[m][k] = (1 - phi(p(1+a) - a k/(m-1))) nu[m-1][k] + phi(p(1+a) - a (k-1)/(m-1)) nu[m-1][k-1]`
/// with `phi` the clamp to `[0, 1]` and `nu[1] = (1 - p, p)`.
pub fn nu_recursion(p: f64, alpha: f64, n: usize) -> Result<NuTable> {
    check_unit(p)?;
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(n + 1);
    rows.push(vec![1.0]);
    rows.push(vec![1.0 - p, p]);
    for m in 2..=n {
        let prev = &rows[m - 1];
        let up = |k: usize| clamp01(p * (1.0 + alpha) - alpha * k as f64 / (m - 1) as f64);
        let row = (0..=m)
            .map(|k| {
                let stay = if k < m { (1.0 - up(k)) * prev[k] } else { 0.0 };
                let rise = if k > 0 { up(k - 1) * prev[k - 1] } else { 0.0 };
                stay + rise
            })
            .collect();
        rows.push(row);
    }
    Ok(NuTable { rows })
}

/// Marginals from the count law:
/// `E[x_m] = sum_k k nu[m][k] - sum_{j<m} E[x_j]`, `E[x_1] = p`.
pub fn marginals_from_nu(table: &NuTable) -> Vec<f64> {
    let mut marginals: Vec<f64> = Vec::with_capacity(table.n());
    let mut running = 0.0;
    for m in 1..=table.n() {
        let expected_count: f64 = table.row(m).iter().enumerate().map(|(k, &w)| k as f64 * w).sum();
        let e = expected_count - running;
        marginals.push(e);
        running += e;
    }
    marginals
}

/// Count law obtained by summing the path law over sequences with equal sums.
pub fn count_law_from_paths(law: &PathLaw) -> Vec<f64> {
    let mut row = vec![0.0; law.n + 1];
    for (mask, w) in law.support() {
        row[mask.count_ones() as usize] += w;
    }
    row
}

/// First and second moments of the draws under a path law.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    /// `mu_i = E[x_i]`.
    pub marginals: Vec<f64>,
    /// `joint[i][j] = P(x_i = 1, x_j = 1)`; the diagonal equals `mu_i`.
    pub joint: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    /// Zero where a marginal is degenerate.
    pub correlation: Vec<Vec<f64>>,
    /// `E[(p̂_n - p)^2]`.
    pub expected_sq_discrepancy: f64,
}

impl MomentReport {
    /// `S[i][j] = P(x_j = 1 | x_i = 1)`; zero rows where `mu_i = 0`.
    pub fn conditionals(&self) -> Vec<Vec<f64>> {
        let n = self.marginals.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if self.marginals[i] > 0.0 { (self.joint[i][j] / self.marginals[i]).clamp(0.0, 1.0) } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Average marginal minus `p`.
    pub fn bias(&self, p: f64) -> f64 {
        self.marginals.iter().sum::<f64>() / self.marginals.len() as f64 - p
    }
}

pub fn moments(law: &PathLaw) -> MomentReport {
    let n = law.n;
    let mut marginals = vec![0.0; n];
    let mut joint = vec![vec![0.0; n]; n];
    let mut expected_sq_discrepancy = 0.0;
    for (mask, w) in law.support() {
        let mut mean = 0.0;
        for i in 0..n {
            mean = running_mean(mean, f64::from(PathLaw::outcome(mask, i)), i + 1);
            if PathLaw::outcome(mask, i) == 0 {
                continue;
            }
            marginals[i] += w;
            for j in 0..n {
                if PathLaw::outcome(mask, j) == 1 {
                    joint[i][j] += w;
                }
            }
        }
        expected_sq_discrepancy += w * (mean - law.p).powi(2);
    }
    report(marginals, joint, expected_sq_discrepancy)
}

fn report(marginals: Vec<f64>, joint: Vec<Vec<f64>>, expected_sq_discrepancy: f64) -> MomentReport {
    let n = marginals.len();
    let covariance: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| joint[i][j] - marginals[i] * marginals[j]).collect())
        .collect();
    let correlation = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let vi = marginals[i] * (1.0 - marginals[i]);
                    let vj = marginals[j] * (1.0 - marginals[j]);
                    if vi > 0.0 && vj > 0.0 {
                        (covariance[i][j] / (vi.sqrt() * vj.sqrt())).clamp(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    MomentReport { marginals, joint, covariance, correlation, expected_sq_discrepancy }
}

/// Longest sequence accepted by [`chain_moments`].
pub const MAX_CHAIN_LENGTH: usize = 512;

/// Probability that draw `m + 1` is one given `k` ones among the first `m`.
fn up_prob(p: f64, alpha: f64, m: usize, k: usize) -> f64 {
    if m == 0 {
        p
    } else {
        clamp01(p * (1.0 + alpha) - alpha * k as f64 / m as f64)
    }
}

/// Advances a count distribution over `m` draws by one draw.
fn advance(p: f64, alpha: f64, m: usize, dist: &[f64]) -> Vec<f64> {
    let mut next = vec![0.0; dist.len() + 1];
    for (k, &w) in dist.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let u = up_prob(p, alpha, m, k);
        next[k] += w * (1.0 - u);
        next[k + 1] += w * u;
    }
    next
}

/// The same report as [`moments`], computed from the count chain instead of
/// the path law. The sampler's state after `m` draws depends only on the
/// number of ones, so pair probabilities follow from conditioning the count
/// distribution on `x_i = 1` and propagating it to step `j`. Cost is
/// `O(n^4)`, which allows `n` far beyond path enumeration.
pub fn chain_moments(p: f64, alpha: f64, n: usize) -> Result<MomentReport> {
    check_unit(p)?;
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if n > MAX_CHAIN_LENGTH {
        return Err(Error::TooLarge { what: "count chain length", size: n as u128, limit: MAX_CHAIN_LENGTH as u128 });
    }
    // counts[m] = law of the number of ones after m draws.
    let mut counts = vec![vec![1.0]];
    for m in 0..n {
        let next = advance(p, alpha, m, &counts[m]);
        counts.push(next);
    }
    let mut marginals = vec![0.0; n];
    let mut joint = vec![vec![0.0; n]; n];
    for i in 0..n {
        // Mass of states after draw i + 1 in which that draw was a one.
        let mut cond = vec![0.0; i + 2];
        for (k, &w) in counts[i].iter().enumerate() {
            cond[k + 1] += w * up_prob(p, alpha, i, k);
        }
        marginals[i] = cond.iter().sum();
        joint[i][i] = marginals[i];
        for j in i + 1..n {
            let both: f64 = cond.iter().enumerate().map(|(k, &w)| w * up_prob(p, alpha, j, k)).sum();
            joint[i][j] = both;
            joint[j][i] = both;
            cond = advance(p, alpha, j, &cond);
        }
    }
    let expected_sq_discrepancy =
        counts[n].iter().enumerate().map(|(k, &w)| w * (k as f64 / n as f64 - p).powi(2)).sum();
    Ok(report(marginals, joint, expected_sq_discrepancy))
}

/// Variance of the unbiased two-sample estimator `g_q` for `d = 1, n = 2`
/// under the sampler's pair law, in closed form over the four `alpha` regimes.
pub fn closed_form_variance<F: Objective + ?Sized>(p: f64, alpha: f64, f: &F) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability { index: 0, value: p });
    }
    check_alpha(alpha)?;
    let c_f = (f.eval(&[1]) - f.eval(&[0])).powi(2);
    let spread = p * (1.0 - p);
    let lo = ((1.0 - p) / p).min(p / (1.0 - p));
    let hi = ((1.0 - p) / p).max(p / (1.0 - p));
    let bracket = if alpha == 0.0 {
        0.5 - spread
    } else if alpha <= lo {
        1.0 / (2.0 * (1.0 + alpha)) - spread
    } else if alpha <= hi {
        let big = p.max(1.0 - p);
        big / (big * (1.0 + alpha) + 1.0) - spread
    } else {
        return Ok(0.0);
    };
    // At the upper regime boundary the bracket is zero up to rounding.
    Ok((c_f * spread * bracket).max(0.0))
}

/// Estimators whose exact moments [`estimator_moments`] can compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Reinforce,
    /// LOORF; on a batch with `alpha > 0` this is DBsurf.
    Loorf,
    /// `p(1-p)/kappa_q (f(x1)-f(x2))(x1-x2)` with `kappa_q` read off the pair
    /// law (`d = 1, n = 2`).
    KappaDebiased,
    /// LOORF times the one-dimensional debias factor of the law.
    Debiased,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Reinforce => "reinforce",
            Self::Loorf => "loorf",
            Self::KappaDebiased => "kappa",
            Self::Debiased => "debiased",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorMoments {
    pub mean: Vec<f64>,
    /// Per-dimension variance.
    pub variance: Vec<f64>,
}

impl EstimatorMoments {
    /// Trace of the covariance.
    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }
}

/// `kappa_q = q(1,0) + q(0,1)` for a two-draw law.
pub fn kappa_of(law: &PathLaw) -> Result<f64> {
    if law.n != 2 {
        return Err(Error::InvalidParameter(format!("kappa needs n = 2, got {}", law.n)));
    }
    Ok(law.prob(0b01) + law.prob(0b10))
}

/// Exact mean and variance of an estimator applied to a batch drawn by the
/// sampler with probabilities `p` (one per dimension), by enumerating every
/// joint outcome. `2^(n d)` must not exceed [`MAX_OUTCOMES`].
pub fn estimator_moments<F: Objective + ?Sized>(
    p: &[f64],
    alpha: f64,
    n: usize,
    f: &F,
    kind: EstimatorKind,
) -> Result<EstimatorMoments> {
    let d = p.len();
    if d == 0 {
        return Err(Error::InvalidParameter("empty probability vector".into()));
    }
    let min_n = if kind == EstimatorKind::Reinforce { 1 } else { 2 };
    if n < min_n {
        return Err(Error::TooFewSamples { required: min_n, got: n });
    }
    let exponent = n.saturating_mul(d);
    let size = if exponent < 127 { 1u128 << exponent } else { u128::MAX };
    guard("joint enumeration outcomes", size)?;
    let laws: Vec<PathLaw> = p.iter().map(|&pk| enumerate_path_law(pk, alpha, n)).collect::<Result<_>>()?;

    let scale: Option<f64> = match kind {
        EstimatorKind::KappaDebiased => {
            if d != 1 || n != 2 {
                return Err(Error::InvalidParameter("kappa estimator needs d = 1 and n = 2".into()));
            }
            let kappa = kappa_of(&laws[0])?;
            if !(kappa > 0.0) {
                return Err(Error::NonPositiveKappa(kappa));
            }
            // LOORF for n = 2 is (1/2)(f1 - f2)(x1 - x2).
            Some(2.0 * p[0] * (1.0 - p[0]) / kappa)
        }
        EstimatorKind::Debiased => {
            if d != 1 {
                return Err(Error::DimensionMismatch { expected: 1, got: d });
            }
            let report = moments(&laws[0]);
            Some(debias_factor(p[0], &report.marginals, &report.conditionals())?)
        }
        _ => None,
    };

    let supports: Vec<Vec<(usize, f64)>> = laws.iter().map(|l| l.support().collect()).collect();
    let mut cursor = vec![0usize; d];
    let mut weighted: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut data = vec![0u8; n * d];
    loop {
        let mut w = 1.0;
        for (k, &c) in cursor.iter().enumerate() {
            let (mask, pk) = supports[k][c];
            w *= pk;
            for i in 0..n {
                data[i * d + k] = PathLaw::outcome(mask, i);
            }
        }
        let batch = SampleMatrix::from_parts_unchecked(n, d, data.clone(), Layout::Binary);
        let mut grad = match kind {
            EstimatorKind::Reinforce => reinforce(&batch, p, f)?.grad,
            _ => loorf(&batch, p, f)?.grad,
        };
        if let Some(s) = scale {
            grad.iter_mut().for_each(|g| *g *= s);
        }
        weighted.push((w, grad));

        // Odometer over the per-dimension supports.
        let mut k = 0;
        loop {
            if k == d {
                return Ok(summarize(&weighted, d));
            }
            cursor[k] += 1;
            if cursor[k] < supports[k].len() {
                break;
            }
            cursor[k] = 0;
            k += 1;
        }
    }
}

fn summarize(weighted: &[(f64, Vec<f64>)], d: usize) -> EstimatorMoments {
    let mut mean = vec![0.0; d];
    for (w, g) in weighted {
        for k in 0..d {
            mean[k] += w * g[k];
        }
    }
    let mut variance = vec![0.0; d];
    for (w, g) in weighted {
        for k in 0..d {
            variance[k] += w * (g[k] - mean[k]).powi(2);
        }
    }
    EstimatorMoments { mean, variance }
}

/// Exact law of a single categorical slot's `n` draws, as
/// `(category sequence, probability)` pairs with positive probability.
pub fn enumerate_categorical_law(row: &CategoricalRow, alpha: f64, n: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    check_alpha(alpha)?;
    let m = row.len() as u128;
    let size = m.checked_pow(n as u32).unwrap_or(u128::MAX);
    guard("categorical path enumeration", size)?;
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(n);
    walk_categorical(row.values(), alpha, n, row.values(), row.values(), 1.0, &mut prefix, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk_categorical(
    p: &[f64],
    alpha: f64,
    n: usize,
    p_hat: &[f64],
    q: &[f64],
    mass: f64,
    prefix: &mut Vec<usize>,
    out: &mut Vec<(Vec<usize>, f64)>,
) {
    let step = prefix.len();
    if step == n {
        out.push((prefix.clone(), mass));
        return;
    }
    for (r, &qr) in q.iter().enumerate() {
        if qr <= 0.0 {
            continue;
        }
        let next_hat: Vec<f64> = p_hat
            .iter()
            .enumerate()
            .map(|(c, &ph)| running_mean(ph, if c == r { 1.0 } else { 0.0 }, step + 1))
            .collect();
        let mut next_q = vec![0.0; p.len()];
        categorical_q(p, alpha, &next_hat, &mut next_q);
        prefix.push(r);
        walk_categorical(p, alpha, n, &next_hat, &next_q, mass * qr, prefix, out);
        prefix.pop();
    }
}

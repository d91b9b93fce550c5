//! Discrepancy-based sampling.
//!
//! Each draw shifts the sampling parameter toward outcomes that are
//! under-represented so far:
//!
//! ```text
//! q <- p
//! for i in 1..=n:
//!     x_i ~ Bernoulli(q)
//!     p̂  <- ((i - 1) p̂ + x_i) / i
//!     q  <- min(1, (p (1 + alpha) - alpha p̂)_+)
//! ```
//!
//! With `alpha = 0` the parameter never moves and the draws are i.i.d. For
//! `alpha <= min((1-p)/p, p/(1-p))` the marginal law of every draw is still
//! `Bernoulli(p)` while consecutive draws become negatively correlated; larger
//! `alpha` trades bias for stronger anti-correlation.
//!
//! Categorical variables run the same correction on every category and then
//! renormalize; finite and infinite discrete supports are reduced to the
//! categorical case.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::prob_core::{running_mean, CategoricalRow, Layout, ProbVector, SampleMatrix};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_TAIL_EPSILON: f64 = 1e-6;

/// Below this total mass a clipped categorical parameter falls back to `p`.
const MIN_CATEGORICAL_MASS: f64 = 1e-12;

/// Generator used wherever a seed is turned into a random stream.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Correction factor.
    pub alpha: f64,
    /// Number of samples per batch.
    pub n: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(alpha: f64, n: usize, seed: u64) -> Result<Self> {
        let cfg = Self { alpha, n, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> SeededRng {
        seeded_rng(self.seed)
    }
}

/// Largest `alpha` for which the sampler keeps every marginal equal to `p`.
pub fn preserving_alpha_bound(p: f64) -> f64 {
    ((1.0 - p) / p).min(p / (1.0 - p))
}

/// Smallest `alpha` from which, for `d = 1`, a second draw is forced to
/// differ from the first.
pub fn collapsing_alpha_bound(p: f64) -> f64 {
    ((1.0 - p) / p).max(p / (1.0 - p))
}

/// Corrected parameter `min(1, (p (1 + alpha) - alpha p̂)_+)`.
#[inline]
pub fn corrected_prob(p: f64, alpha: f64, p_hat: f64) -> f64 {
    (p * (1.0 + alpha) - alpha * p_hat).clamp(0.0, 1.0)
}

/// Running state of a Bernoulli sampler over one batch.
#[derive(Debug, Clone)]
pub struct SamplerState {
    p: Vec<f64>,
    p_hat: Vec<f64>,
    q: Vec<f64>,
    step: usize,
    alpha: f64,
}

impl SamplerState {
    pub fn new(p: &ProbVector, alpha: f64) -> Self {
        Self {
            p: p.values().to_vec(),
            // Overwritten by the first update; kept equal to p as in the
            // algorithm's initialisation.
            p_hat: p.values().to_vec(),
            q: p.values().to_vec(),
            step: 0,
            alpha,
        }
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Draws the next sample into `out`, one uniform per dimension in order.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [u8]) {
        debug_assert_eq!(out.len(), self.p.len());
        self.step += 1;
        let i = self.step;
        for k in 0..self.p.len() {
            let u: f64 = rng.gen();
            let x = u8::from(u < self.q[k]);
            out[k] = x;
            self.p_hat[k] = running_mean(self.p_hat[k], f64::from(x), i);
            self.q[k] = corrected_prob(self.p[k], self.alpha, self.p_hat[k]);
        }
    }
}

/// `n` independent `Bernoulli(p)` rows from the seed in `cfg` (alpha ignored).
pub fn iid_sample(p: &ProbVector, cfg: &SamplerConfig) -> Result<SampleMatrix> {
    cfg.validate()?;
    Ok(iid_sample_with(p, cfg.n, &mut cfg.rng()))
}

pub fn iid_sample_with<R: Rng + ?Sized>(p: &ProbVector, n: usize, rng: &mut R) -> SampleMatrix {
    let d = p.len();
    let mut data = vec![0u8; n * d];
    for row in data.chunks_mut(d) {
        for (x, &pk) in row.iter_mut().zip(p.values()) {
            let u: f64 = rng.gen();
            *x = u8::from(u < pk);
        }
    }
    SampleMatrix::from_parts_unchecked(n, d, data, Layout::Binary)
}

/// Discrepancy-based Bernoulli sampling seeded from `cfg`.
pub fn db_sample_bernoulli(p: &ProbVector, cfg: &SamplerConfig) -> Result<SampleMatrix> {
    cfg.validate()?;
    Ok(db_sample_bernoulli_with(p, cfg.alpha, cfg.n, &mut cfg.rng()))
}

pub fn db_sample_bernoulli_with<R: Rng + ?Sized>(
    p: &ProbVector,
    alpha: f64,
    n: usize,
    rng: &mut R,
) -> SampleMatrix {
    let d = p.len();
    let mut state = SamplerState::new(p, alpha);
    let mut data = vec![0u8; n * d];
    for row in data.chunks_mut(d) {
        state.draw(rng, row);
    }
    SampleMatrix::from_parts_unchecked(n, d, data, Layout::Binary)
}

/// Clips every category like the Bernoulli update, then normalizes to unit
/// mass. Falls back to `p` if clipping leaves (numerically) no mass.
pub fn categorical_q(p: &[f64], alpha: f64, p_hat: &[f64], out: &mut [f64]) {
    for ((q, &pr), &ph) in out.iter_mut().zip(p).zip(p_hat) {
        *q = corrected_prob(pr, alpha, ph);
    }
    let total: f64 = out.iter().sum();
    if total < MIN_CATEGORICAL_MASS {
        out.copy_from_slice(p);
    } else {
        out.iter_mut().for_each(|q| *q /= total);
    }
}

/// Inverse-cdf draw from normalized weights with a single uniform.
pub fn draw_index(weights: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        cum += w;
        if u < cum {
            return k;
        }
    }
    // u landed in the rounding gap above the last cumulative sum.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Running state of a categorical sampler for one slot.
#[derive(Debug, Clone)]
pub struct CategoricalState {
    p: Vec<f64>,
    p_hat: Vec<f64>,
    q: Vec<f64>,
    step: usize,
    alpha: f64,
}

impl CategoricalState {
    pub fn new(row: &CategoricalRow, alpha: f64) -> Self {
        Self {
            p: row.values().to_vec(),
            p_hat: row.values().to_vec(),
            q: row.values().to_vec(),
            step: 0,
            alpha,
        }
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let chosen = draw_index(&self.q, u);
        self.step += 1;
        for (r, ph) in self.p_hat.iter_mut().enumerate() {
            *ph = running_mean(*ph, if r == chosen { 1.0 } else { 0.0 }, self.step);
        }
        categorical_q(&self.p, self.alpha, &self.p_hat, &mut self.q);
        chosen
    }
}

/// Discrepancy-based categorical sampling, one independent sampler per row.
/// The output has one one-hot block per row.
pub fn db_sample_categorical(rows: &[CategoricalRow], cfg: &SamplerConfig) -> Result<SampleMatrix> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::InvalidParameter("no categorical rows".into()));
    }
    Ok(db_sample_categorical_with(rows, cfg.alpha, cfg.n, &mut cfg.rng()))
}

/// Draw order is step-major: at every step each slot consumes one uniform,
/// slots in order.
pub fn db_sample_categorical_with<R: Rng + ?Sized>(
    rows: &[CategoricalRow],
    alpha: f64,
    n: usize,
    rng: &mut R,
) -> SampleMatrix {
    let mut states: Vec<CategoricalState> = rows.iter().map(|r| CategoricalState::new(r, alpha)).collect();
    one_hot_batch(rows, n, |slot| states[slot].draw(rng))
}

pub fn iid_categorical(rows: &[CategoricalRow], cfg: &SamplerConfig) -> Result<SampleMatrix> {
    cfg.validate()?;
    Ok(iid_categorical_with(rows, cfg.n, &mut cfg.rng()))
}

pub fn iid_categorical_with<R: Rng + ?Sized>(rows: &[CategoricalRow], n: usize, rng: &mut R) -> SampleMatrix {
    one_hot_batch(rows, n, |slot| draw_index(rows[slot].values(), rng.gen()))
}

fn one_hot_batch(rows: &[CategoricalRow], n: usize, mut draw: impl FnMut(usize) -> usize) -> SampleMatrix {
    let sizes: Vec<usize> = rows.iter().map(CategoricalRow::len).collect();
    let width: usize = sizes.iter().sum();
    let mut data = vec![0u8; n * width];
    for row in data.chunks_mut(width.max(1)).take(n) {
        let mut offset = 0;
        for (slot, &m) in sizes.iter().enumerate() {
            row[offset + draw(slot)] = 1;
            offset += m;
        }
    }
    SampleMatrix::from_parts_unchecked(n, width, data, Layout::OneHot { sizes })
}

/// A discrete law on finitely many distinct real atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSupport {
    atoms: Vec<f64>,
    probs: CategoricalRow,
}

impl FiniteSupport {
    pub fn new(atoms: Vec<f64>, probs: CategoricalRow) -> Result<Self> {
        if atoms.len() != probs.len() {
            return Err(Error::DimensionMismatch { expected: atoms.len(), got: probs.len() });
        }
        for (i, a) in atoms.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite { index: i, value: *a });
            }
            if atoms[..i].contains(a) {
                return Err(Error::InvalidParameter(format!("duplicate atom {a}")));
            }
        }
        Ok(Self { atoms, probs })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn probs(&self) -> &CategoricalRow {
        &self.probs
    }
}

pub fn db_sample_finite_support(s: &FiniteSupport, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok(db_sample_finite_support_with(s, cfg.alpha, cfg.n, &mut cfg.rng()))
}

pub fn db_sample_finite_support_with<R: Rng + ?Sized>(
    s: &FiniteSupport,
    alpha: f64,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut state = CategoricalState::new(&s.probs, alpha);
    (0..n).map(|_| s.atoms[state.draw(rng)]).collect()
}

/// Draws from the law conditioned on the grouped tail.
pub type TailSampler = Arc<dyn Fn(&mut dyn RngCore) -> Result<f64> + Send + Sync>;

/// An infinite-support discrete law reduced to `m + 1` categories: the head
/// atoms plus one category standing for the whole tail.
#[derive(Clone)]
pub struct TailGroupedSupport {
    atoms: Vec<f64>,
    head_probs: Vec<f64>,
    tail_prob: f64,
    epsilon: f64,
    tail_sampler: TailSampler,
}

impl std::fmt::Debug for TailGroupedSupport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TailGroupedSupport")
            .field("atoms", &self.atoms)
            .field("head_probs", &self.head_probs)
            .field("tail_prob", &self.tail_prob)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

const MAX_HEAD_ATOMS: usize = 1_000_000;
const MAX_TAIL_WALK: usize = 10_000_000;

impl TailGroupedSupport {
    pub fn new(
        atoms: Vec<f64>,
        head_probs: Vec<f64>,
        tail_prob: f64,
        epsilon: f64,
        tail_sampler: TailSampler,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be in (0, 1), got {epsilon}")));
        }
        if atoms.len() != head_probs.len() {
            return Err(Error::DimensionMismatch { expected: atoms.len(), got: head_probs.len() });
        }
        if !(0.0..=1.0).contains(&tail_prob) {
            return Err(Error::InvalidProbability { index: atoms.len(), value: tail_prob });
        }
        let mut with_tail = head_probs.clone();
        with_tail.push(tail_prob);
        CategoricalRow::new(with_tail)?;
        Ok(Self { atoms, head_probs, tail_prob, epsilon, tail_sampler })
    }

    /// Groups an integer-supported pmf starting at `start`. The head holds
    /// every atom whose preceding cumulative mass is below `1 - epsilon`, so
    /// the head covers at least `1 - epsilon` of the mass. The tail sampler
    /// walks the pmf beyond the head by inverse cdf.
    pub fn from_integer_pmf<F>(start: i64, pmf: F, epsilon: f64) -> Result<Self>
    where
        F: Fn(i64) -> f64 + Send + Sync + 'static,
    {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be in (0, 1), got {epsilon}")));
        }
        let mut atoms = Vec::new();
        let mut head_probs = Vec::new();
        let mut cum = 0.0;
        let mut k = start;
        while cum < 1.0 - epsilon {
            if atoms.len() >= MAX_HEAD_ATOMS {
                return Err(Error::TooLarge {
                    what: "tail grouping head",
                    size: atoms.len() as u128,
                    limit: MAX_HEAD_ATOMS as u128,
                });
            }
            let mass = pmf(k);
            atoms.push(k as f64);
            head_probs.push(mass);
            cum += mass;
            k += 1;
        }
        let tail_prob = (1.0 - cum).max(0.0);
        let first_tail = k;
        let pmf = Arc::new(pmf);
        let tail_sampler: TailSampler = Arc::new(move |rng: &mut dyn RngCore| {
            let target = rng.gen::<f64>() * tail_prob;
            let mut acc = 0.0;
            let mut last_positive = None;
            for j in 0..MAX_TAIL_WALK {
                let atom = first_tail + j as i64;
                let mass = pmf(atom);
                if mass > 0.0 {
                    last_positive = Some(atom);
                }
                acc += mass;
                if target < acc {
                    return Ok(atom as f64);
                }
                if mass == 0.0 && last_positive.is_some() {
                    // Remaining mass underflowed; target sits in rounding dust.
                    return Ok(last_positive.unwrap_or(atom) as f64);
                }
            }
            Err(Error::TailSampler(format!(
                "no tail atom reached within {MAX_TAIL_WALK} steps from {first_tail}"
            )))
        });
        Self::new(atoms, head_probs, tail_prob, epsilon, tail_sampler)
    }

    pub fn poisson(lambda: f64, epsilon: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("poisson rate must be > 0, got {lambda}")));
        }
        Self::from_integer_pmf(
            0,
            move |k| {
                let log_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
                (k as f64 * lambda.ln() - lambda - log_fact).exp()
            },
            epsilon,
        )
    }

    /// Geometric law on `{1, 2, ...}` (number of trials to first success).
    pub fn geometric(p: f64, epsilon: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!("geometric p must be in (0, 1], got {p}")));
        }
        Self::from_integer_pmf(1, move |k| (1.0 - p).powi((k - 1) as i32) * p, epsilon)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn head_probs(&self) -> &[f64] {
        &self.head_probs
    }

    pub fn tail_prob(&self) -> f64 {
        self.tail_prob
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn grouped_row(&self) -> CategoricalRow {
        let mut probs = self.head_probs.clone();
        if self.tail_prob > 0.0 {
            probs.push(self.tail_prob);
        }
        CategoricalRow::new(probs).expect("validated at construction")
    }
}

pub fn db_sample_infinite_support(s: &TailGroupedSupport, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    db_sample_infinite_support_with(s, cfg.alpha, cfg.n, &mut cfg.rng())
}

/// The tail draw is only made when the tail category comes up.
pub fn db_sample_infinite_support_with<R: RngCore>(
    s: &TailGroupedSupport,
    alpha: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let row = s.grouped_row();
    let m = s.atoms.len();
    let mut state = CategoricalState::new(&row, alpha);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k = state.draw(rng);
        if k < m {
            out.push(s.atoms[k]);
        } else {
            out.push((s.tail_sampler)(rng)?);
        }
    }
    Ok(out)
}

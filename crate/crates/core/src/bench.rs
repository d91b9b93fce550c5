//! Sweeps over `(p, n, alpha)` for the one-dimensional toy objective and an
//! end-to-end optimization run, all rendered as CSV.
//!
//! Grid points are independent work items and run through [`crate::par`];
//! Monte-Carlo points draw from a seed derived from the run seed and the
//! point's index, so the output is the same for any worker count.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::{debias_factor, loorf, reinforce, Objective};
use crate::fmt_num;
use crate::optim::{Optimizer, OptimizerKind};
use crate::oracle::{
    chain_moments, enumerate_path_law, estimator_moments, exact_gradient, moments, EstimatorKind, MomentReport,
    MAX_PATH_LENGTH,
};
use crate::par::{derive_seed, try_map};
use crate::prob_core::{discrepancy, sigmoid_scalar, squared_norm, ProbVector, SampleMatrix};
use crate::sampler::{db_sample_bernoulli_with, seeded_rng, SeededRng};

/// Probabilities in a sweep grid are clipped to `[P_CLIP, 1 - P_CLIP]`.
pub const P_CLIP: f64 = 1e-3;

/// `f(x) = sum_k (x_k - target)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyObjective {
    target: f64,
}

impl ToyObjective {
    pub fn target(&self) -> f64 {
        self.target
    }
}

impl Objective for ToyObjective {
    fn eval(&self, x: &[u8]) -> f64 {
        x.iter().map(|&v| (f64::from(v) - self.target).powi(2)).sum()
    }
}

pub fn toy_objective(target: f64) -> Result<ToyObjective> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidParameter(format!("target must lie in (0, 1), got {target}")));
    }
    Ok(ToyObjective { target })
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident, $what:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::InvalidParameter(format!(
                        concat!("unknown ", $what, " '{}' (expected one of: {})"),
                        s,
                        $name::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(SweepKind, "sweep" {
    Variance => "variance",
    Discrepancy => "discrepancy",
    BiasCorrelation => "biascorr",
    CorrelationMatrix => "corrmatrix",
});

named_enum!(
    /// How a sweep point is evaluated.
    Method, "method" {
        Auto => "auto",
        Enum => "enum",
        Mc => "mc",
    }
);

named_enum!(
    /// Estimators a variance sweep can evaluate. `dbsurf` is LOORF on a
    /// discrepancy-corrected batch times the one-dimensional debias factor;
    /// `loorf` is the raw estimator on the same batch; `kappa` is the
    /// two-sample pair estimator.
    SweepEstimator, "estimator" {
        Dbsurf => "dbsurf",
        Loorf => "loorf",
        Reinforce => "reinforce",
        Kappa => "kappa",
    }
);

/// Evenly spaced probabilities with inclusive endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for PGrid {
    fn default() -> Self {
        Self { lo: 0.02, hi: 0.98, count: 49 }
    }
}

impl PGrid {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidParameter("grid needs at least one point".into()));
        }
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::InvalidParameter(format!("bad grid range {}..{}", self.lo, self.hi)));
        }
        if self.count > 1 && self.lo == self.hi {
            return Err(Error::InvalidParameter("grid range is empty but count > 1".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        (0..self.count)
            .map(|k| {
                let p = if self.count == 1 { self.lo } else { self.lo + span * k as f64 / (self.count - 1) as f64 };
                p.clamp(P_CLIP, 1.0 - P_CLIP)
            })
            .collect()
    }
}

impl FromStr for PGrid {
    type Err = Error;

    /// `lo:hi:count`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParameter(format!("grid must look like lo:hi:count, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let grid = Self {
            lo: parts[0].trim().parse().map_err(|_| bad())?,
            hi: parts[1].trim().parse().map_err(|_| bad())?,
            count: parts[2].trim().parse().map_err(|_| bad())?,
        };
        grid.validate()?;
        Ok(grid)
    }
}

impl fmt::Display for PGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub grid: PGrid,
    pub n_list: Vec<usize>,
    pub alpha_list: Vec<f64>,
    /// Used by the variance sweep only.
    pub estimators: Vec<SweepEstimator>,
    pub mc_reps: usize,
    pub seed: u64,
    pub method: Method,
    pub target: f64,
    /// Worker count; does not affect the output.
    pub jobs: usize,
}

impl SweepSpec {
    pub fn defaults(kind: SweepKind) -> Self {
        let (n_list, alpha_list) = match kind {
            SweepKind::Variance => (vec![2, 4], vec![0.0, 1.0]),
            SweepKind::Discrepancy => (vec![2, 4, 6, 8], vec![1.0]),
            SweepKind::BiasCorrelation => (vec![2], vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0]),
            SweepKind::CorrelationMatrix => (vec![4], vec![0.0, 0.5, 1.0]),
        };
        Self {
            grid: PGrid::default(),
            n_list,
            alpha_list,
            estimators: vec![SweepEstimator::Dbsurf],
            mc_reps: 1000,
            seed: 0,
            method: Method::Auto,
            target: 0.49,
            jobs: 1,
        }
    }

    pub fn validate(&self, kind: SweepKind) -> Result<()> {
        self.grid.validate()?;
        if self.mc_reps == 0 {
            return Err(Error::InvalidParameter("mc_reps must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidParameter("jobs must be at least 1".into()));
        }
        if self.n_list.is_empty() || self.alpha_list.is_empty() {
            return Err(Error::InvalidParameter("n_list and alpha_list must be non-empty".into()));
        }
        if let Some(&a) = self.alpha_list.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidParameter(format!("alpha must be finite and >= 0, got {a}")));
        }
        if self.n_list.contains(&0) {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        toy_objective(self.target)?;
        match kind {
            SweepKind::Variance => {
                if self.estimators.is_empty() {
                    return Err(Error::InvalidParameter("estimator list must be non-empty".into()));
                }
                let needs_pair = self.estimators.iter().any(|e| *e != SweepEstimator::Reinforce);
                if needs_pair && self.n_list.contains(&1) {
                    return Err(Error::TooFewSamples { required: 2, got: 1 });
                }
                if self.estimators.contains(&SweepEstimator::Kappa) && self.n_list.iter().any(|&n| n != 2) {
                    return Err(Error::InvalidParameter("the kappa estimator needs n = 2".into()));
                }
            }
            SweepKind::BiasCorrelation if self.n_list != [2] => {
                return Err(Error::InvalidParameter("bias/correlation sweep is defined for n = 2".into()));
            }
            SweepKind::CorrelationMatrix if self.n_list != [4] => {
                return Err(Error::InvalidParameter("correlation matrix sweep is defined for n = 4".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// `#`-comment lines echoing the spec. `jobs` is left out on purpose.
    fn comment_lines(&self, kind: SweepKind) -> Vec<String> {
        let list = |v: Vec<String>| v.join(";");
        let mut lines = vec![
            format!("sweep={kind}"),
            format!("p_grid={}", self.grid),
            format!("p_clip={P_CLIP}"),
            format!("n_list={}", list(self.n_list.iter().map(|n| n.to_string()).collect())),
            format!("alpha_list={}", list(self.alpha_list.iter().map(|a| a.to_string()).collect())),
        ];
        if kind == SweepKind::Variance {
            lines.push(format!("estimators={}", list(self.estimators.iter().map(|e| e.to_string()).collect())));
        }
        if matches!(kind, SweepKind::Variance | SweepKind::Discrepancy) {
            lines.push(format!("method={}", self.method));
            lines.push(format!("mc_reps={}", self.mc_reps));
            lines.push(format!("seed={}", self.seed));
        }
        lines.push(format!("objective=(x-{})^2", self.target));
        if kind == SweepKind::Variance {
            lines.push("variance=trace of the estimator covariance (d=1)".into());
        }
        lines
    }
}

/// Rows that render as one CSV line.
pub trait CsvRow {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

/// Renders a CSV document: build id and comment lines, header, rows.
pub fn render_csv<R: CsvRow>(comments: &[String], rows: &[R]) -> String {
    let mut out = format!("# {}\n", crate::BUILD_ID);
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(&R::HEADER.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.fields().join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub p: f64,
    pub n: usize,
    pub alpha: f64,
    pub estimator: SweepEstimator,
    pub variance: f64,
    /// Zero for exact rows.
    pub stderr: f64,
    pub method: Method,
}

impl CsvRow for VarianceRow {
    const HEADER: &'static [&'static str] = &["p", "n", "alpha", "estimator", "variance", "stderr", "method"];

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_num(self.p),
            self.n.to_string(),
            fmt_num(self.alpha),
            self.estimator.to_string(),
            fmt_num(self.variance),
            fmt_num(self.stderr),
            self.method.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyRow {
    pub p: f64,
    pub n: usize,
    pub alpha: f64,
    /// `iid` or `dbsample`.
    pub sampler: &'static str,
    pub e_sq_discrepancy: f64,
    pub stderr: f64,
    pub method: Method,
}

impl CsvRow for DiscrepancyRow {
    const HEADER: &'static [&'static str] = &["p", "n", "alpha", "sampler", "e_sq_discrepancy", "stderr", "method"];

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_num(self.p),
            self.n.to_string(),
            fmt_num(self.alpha),
            self.sampler.to_string(),
            fmt_num(self.e_sq_discrepancy),
            fmt_num(self.stderr),
            self.method.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCorrelationRow {
    pub p: f64,
    pub alpha: f64,
    pub bias: f64,
    pub correlation: f64,
}

impl CsvRow for BiasCorrelationRow {
    const HEADER: &'static [&'static str] = &["p", "alpha", "bias", "correlation"];

    fn fields(&self) -> Vec<String> {
        vec![fmt_num(self.p), fmt_num(self.alpha), fmt_num(self.bias), fmt_num(self.correlation)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub p: f64,
    pub alpha: f64,
    /// 1-based draw indices, `i < j`.
    pub i: usize,
    pub j: usize,
    pub corr: f64,
}

impl CsvRow for CorrelationRow {
    const HEADER: &'static [&'static str] = &["p", "alpha", "i", "j", "corr"];

    fn fields(&self) -> Vec<String> {
        vec![fmt_num(self.p), fmt_num(self.alpha), self.i.to_string(), self.j.to_string(), fmt_num(self.corr)]
    }
}

/// Picks enumeration or Monte-Carlo for a sequence of length `n`.
fn resolve(method: Method, n: usize) -> Result<Method> {
    match method {
        Method::Auto if n <= MAX_PATH_LENGTH => Ok(Method::Enum),
        Method::Auto => Ok(Method::Mc),
        Method::Enum if n > MAX_PATH_LENGTH => Err(Error::TooLarge {
            what: "path enumeration length",
            size: n as u128,
            limit: MAX_PATH_LENGTH as u128,
        }),
        m => Ok(m),
    }
}

/// Sample mean and variance of `xs`, with the standard error of each.
struct Summary {
    mean: f64,
    mean_stderr: f64,
    variance: f64,
    variance_stderr: f64,
}

fn summarize(xs: &[f64]) -> Summary {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m;
    let variance = if xs.len() > 1 { m2 * m / (m - 1.0) } else { 0.0 };
    Summary {
        mean,
        mean_stderr: (variance / m).sqrt(),
        variance,
        variance_stderr: ((m4 - m2 * m2).max(0.0) / m).sqrt(),
    }
}

/// Scale that turns LOORF on the sampler's batch into the chosen estimator.
fn estimator_scale(est: SweepEstimator, p: f64, alpha: f64, n: usize) -> Result<f64> {
    match est {
        SweepEstimator::Loorf | SweepEstimator::Reinforce => Ok(1.0),
        SweepEstimator::Dbsurf => {
            let r = chain_moments(p, alpha, n)?;
            debias_factor(p, &r.marginals, &r.conditionals())
        }
        SweepEstimator::Kappa => {
            let r = chain_moments(p, alpha, 2)?;
            let kappa = r.marginals[0] + r.marginals[1] - 2.0 * r.joint[0][1];
            if !(kappa > 0.0) {
                return Err(Error::NonPositiveKappa(kappa));
            }
            Ok(2.0 * p * (1.0 - p) / kappa)
        }
    }
}

fn batch(p: f64, alpha: f64, n: usize, rng: &mut SeededRng) -> Result<(ProbVector, SampleMatrix)> {
    let pv = ProbVector::scalar(p)?;
    let samples = db_sample_bernoulli_with(&pv, alpha, n, rng);
    Ok((pv, samples))
}

#[derive(Debug, Clone, Copy)]
struct VariancePoint {
    p: f64,
    n: usize,
    alpha: f64,
    estimator: SweepEstimator,
}

fn variance_point(spec: &SweepSpec, index: usize, pt: &VariancePoint) -> Result<VarianceRow> {
    let f = toy_objective(spec.target)?;
    let method = resolve(spec.method, pt.n)?;
    let (variance, stderr) = match method {
        Method::Enum => {
            let kind = match pt.estimator {
                SweepEstimator::Dbsurf => EstimatorKind::Debiased,
                SweepEstimator::Loorf => EstimatorKind::Loorf,
                SweepEstimator::Reinforce => EstimatorKind::Reinforce,
                SweepEstimator::Kappa => EstimatorKind::KappaDebiased,
            };
            (estimator_moments(&[pt.p], pt.alpha, pt.n, &f, kind)?.total_variance(), 0.0)
        }
        _ => {
            let scale = estimator_scale(pt.estimator, pt.p, pt.alpha, pt.n)?;
            let mut rng = seeded_rng(derive_seed(spec.seed, index as u64));
            let mut draws = Vec::with_capacity(spec.mc_reps);
            for _ in 0..spec.mc_reps {
                let (pv, samples) = batch(pt.p, pt.alpha, pt.n, &mut rng)?;
                let g = match pt.estimator {
                    SweepEstimator::Reinforce => reinforce(&samples, pv.values(), &f)?,
                    _ => loorf(&samples, pv.values(), &f)?,
                };
                draws.push(g.grad[0] * scale);
            }
            let s = summarize(&draws);
            (s.variance, s.variance_stderr)
        }
    };
    Ok(VarianceRow { p: pt.p, n: pt.n, alpha: pt.alpha, estimator: pt.estimator, variance, stderr, method })
}

/// Estimator variance over the grid. Rows are ordered by `n`, then `alpha`,
/// then estimator, then `p`.
pub fn variance_sweep(spec: &SweepSpec) -> Result<Vec<VarianceRow>> {
    spec.validate(SweepKind::Variance)?;
    let grid = spec.grid.points();
    let mut points = Vec::new();
    for &n in &spec.n_list {
        for &alpha in &spec.alpha_list {
            for &estimator in &spec.estimators {
                points.extend(grid.iter().map(|&p| VariancePoint { p, n, alpha, estimator }));
            }
        }
    }
    try_map(&points, spec.jobs, |i, pt| variance_point(spec, i, pt))
}

#[derive(Debug, Clone, Copy)]
struct DiscrepancyPoint {
    p: f64,
    n: usize,
    alpha: f64,
    sampler: &'static str,
}

fn discrepancy_point(spec: &SweepSpec, index: usize, pt: &DiscrepancyPoint) -> Result<DiscrepancyRow> {
    let method = resolve(spec.method, pt.n)?;
    let (value, stderr) = match method {
        Method::Enum => (moments(&enumerate_path_law(pt.p, pt.alpha, pt.n)?).expected_sq_discrepancy, 0.0),
        _ => {
            let mut rng = seeded_rng(derive_seed(spec.seed, index as u64));
            let mut draws = Vec::with_capacity(spec.mc_reps);
            for _ in 0..spec.mc_reps {
                let (pv, samples) = batch(pt.p, pt.alpha, pt.n, &mut rng)?;
                draws.push(squared_norm(&discrepancy(&samples, pv.values())?));
            }
            let s = summarize(&draws);
            (s.mean, s.mean_stderr)
        }
    };
    Ok(DiscrepancyRow {
        p: pt.p,
        n: pt.n,
        alpha: pt.alpha,
        sampler: pt.sampler,
        e_sq_discrepancy: value,
        stderr,
        method,
    })
}

/// Mean squared discrepancy `E[(p̂ - p)^2]`: one i.i.d. row and one row per
/// `alpha` for each `(n, p)`. Ordered by `n`, then sampler, then `p`.
pub fn discrepancy_sweep(spec: &SweepSpec) -> Result<Vec<DiscrepancyRow>> {
    spec.validate(SweepKind::Discrepancy)?;
    let grid = spec.grid.points();
    let mut points = Vec::new();
    for &n in &spec.n_list {
        points.extend(grid.iter().map(|&p| DiscrepancyPoint { p, n, alpha: 0.0, sampler: "iid" }));
        for &alpha in &spec.alpha_list {
            points.extend(grid.iter().map(|&p| DiscrepancyPoint { p, n, alpha, sampler: "dbsample" }));
        }
    }
    try_map(&points, spec.jobs, |i, pt| discrepancy_point(spec, i, pt))
}

fn exact_report(p: f64, alpha: f64, n: usize) -> Result<MomentReport> {
    Ok(moments(&enumerate_path_law(p, alpha, n)?))
}

/// Bias `E[(x_1 + x_2)/2] - p` and correlation of a two-draw batch, by
/// enumeration. Ordered by `alpha`, then `p`.
pub fn bias_correlation_sweep(spec: &SweepSpec) -> Result<Vec<BiasCorrelationRow>> {
    spec.validate(SweepKind::BiasCorrelation)?;
    let grid = spec.grid.points();
    let points: Vec<(f64, f64)> =
        spec.alpha_list.iter().flat_map(|&a| grid.iter().map(move |&p| (p, a))).collect();
    try_map(&points, spec.jobs, |_, &(p, alpha)| {
        let r = exact_report(p, alpha, 2)?;
        Ok(BiasCorrelationRow { p, alpha, bias: r.bias(p), correlation: r.correlation[0][1] })
    })
}

/// Pairwise correlations of a four-draw batch, by enumeration. Ordered by
/// `alpha`, then `p`, then pair.
pub fn correlation_matrix_sweep(spec: &SweepSpec) -> Result<Vec<CorrelationRow>> {
    spec.validate(SweepKind::CorrelationMatrix)?;
    let grid = spec.grid.points();
    let points: Vec<(f64, f64)> =
        spec.alpha_list.iter().flat_map(|&a| grid.iter().map(move |&p| (p, a))).collect();
    let blocks = try_map(&points, spec.jobs, |_, &(p, alpha)| {
        let r = exact_report(p, alpha, 4)?;
        let mut rows = Vec::with_capacity(6);
        for i in 0..4 {
            for j in i + 1..4 {
                rows.push(CorrelationRow { p, alpha, i: i + 1, j: j + 1, corr: r.correlation[i][j] });
            }
        }
        Ok(rows)
    })?;
    Ok(blocks.into_iter().flatten().collect())
}

/// Runs a sweep and renders it as CSV.
pub fn sweep_csv(kind: SweepKind, spec: &SweepSpec) -> Result<String> {
    let comments = spec.comment_lines(kind);
    Ok(match kind {
        SweepKind::Variance => render_csv(&comments, &variance_sweep(spec)?),
        SweepKind::Discrepancy => render_csv(&comments, &discrepancy_sweep(spec)?),
        SweepKind::BiasCorrelation => render_csv(&comments, &bias_correlation_sweep(spec)?),
        SweepKind::CorrelationMatrix => render_csv(&comments, &correlation_matrix_sweep(spec)?),
    })
}

named_enum!(
    /// Gradient used by [`optimize_toy`]. `true` is the exact gradient.
    ToyEstimator, "estimator" {
        Dbsurf => "dbsurf",
        Loorf => "loorf",
        Reinforce => "reinforce",
        True => "true",
    }
);

named_enum!(StepRule, "optimizer" {
    Adam => "adam",
    Sgd => "sgd",
});

#[derive(Debug, Clone, PartialEq)]
pub struct OptimRunSpec {
    pub theta0: f64,
    pub target: f64,
    pub step_size: f64,
    pub steps: usize,
    pub n: usize,
    pub alpha: f64,
    pub estimator: ToyEstimator,
    pub optimizer: StepRule,
    pub maximize: bool,
    pub seed: u64,
}

impl Default for OptimRunSpec {
    fn default() -> Self {
        Self {
            theta0: 0.0,
            target: 0.49,
            step_size: 0.1,
            steps: 2000,
            n: 2,
            alpha: 1.0,
            estimator: ToyEstimator::Dbsurf,
            optimizer: StepRule::Adam,
            maximize: true,
            seed: 0,
        }
    }
}

/// The run stops once `|theta|` exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 50.0;

impl OptimRunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {}", self.step_size)));
        }
        if !self.theta0.is_finite() {
            return Err(Error::InvalidParameter(format!("theta0 must be finite, got {}", self.theta0)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        let min_n = if self.estimator == ToyEstimator::Reinforce { 1 } else { 2 };
        if self.estimator != ToyEstimator::True && self.n < min_n {
            return Err(Error::TooFewSamples { required: min_n, got: self.n });
        }
        toy_objective(self.target)?;
        Ok(())
    }

    fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            StepRule::Adam => OptimizerKind::adam(self.step_size, 0.9, 0.999),
            StepRule::Sgd => OptimizerKind::Sgd { lr: self.step_size },
        }
    }

    fn comment_lines(&self) -> Vec<String> {
        vec![
            format!("theta0={}", self.theta0),
            format!("target={}", self.target),
            format!("step_size={}", self.step_size),
            format!("steps={}", self.steps),
            format!("n={}", self.n),
            format!("alpha={}", self.alpha),
            format!("estimator={}", self.estimator),
            format!("optimizer={}", self.optimizer),
            format!("maximize={}", self.maximize),
            format!("seed={}", self.seed),
        ]
    }
}

/// One optimization step: parameters before the update and the gradients used.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub theta: f64,
    pub p: f64,
    pub estimate: f64,
    pub true_gradient: f64,
}

impl CsvRow for TrajectoryRow {
    const HEADER: &'static [&'static str] = &["step", "theta", "p", "estimate", "true_gradient"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            fmt_num(self.theta),
            fmt_num(self.p),
            fmt_num(self.estimate),
            fmt_num(self.true_gradient),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// `|theta|` exceeded [`DIVERGENCE_LIMIT`] after the given step.
    Diverged { step: usize },
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Completed => f.write_str("completed"),
            Self::Diverged { step } => write!(f, "diverged at step {step}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimRun {
    pub rows: Vec<TrajectoryRow>,
    pub status: RunStatus,
    pub final_theta: f64,
    pub final_p: f64,
}

impl OptimRun {
    pub fn to_csv(&self, spec: &OptimRunSpec) -> String {
        let mut comments = spec.comment_lines();
        comments.push(format!("status={}", self.status));
        comments.push(format!("final_theta={}", fmt_num(self.final_theta)));
        comments.push(format!("final_p={}", fmt_num(self.final_p)));
        render_csv(&comments, &self.rows)
    }
}

fn toy_estimate(spec: &OptimRunSpec, f: &ToyObjective, p: f64, rng: &mut SeededRng) -> Result<f64> {
    let pv = ProbVector::scalar(p)?;
    let g = match spec.estimator {
        ToyEstimator::True => return Ok(exact_gradient(p, f)),
        ToyEstimator::Reinforce => reinforce(&db_sample_bernoulli_with(&pv, 0.0, spec.n, rng), &[p], f)?,
        ToyEstimator::Loorf => loorf(&db_sample_bernoulli_with(&pv, 0.0, spec.n, rng), &[p], f)?,
        ToyEstimator::Dbsurf => loorf(&db_sample_bernoulli_with(&pv, spec.alpha, spec.n, rng), &[p], f)?,
    };
    let raw = g.grad[0];
    if spec.estimator != ToyEstimator::Dbsurf || raw == 0.0 {
        return Ok(raw);
    }
    Ok(raw * estimator_scale(SweepEstimator::Dbsurf, p, spec.alpha, spec.n)?)
}

/// Gradient ascent (or descent) on the logit `theta` of the toy objective.
/// The estimators already return logit-space gradients, so they are applied
/// as they are.
pub fn optimize_toy(spec: &OptimRunSpec) -> Result<OptimRun> {
    spec.validate()?;
    let f = toy_objective(spec.target)?;
    let mut opt = Optimizer::new(spec.optimizer_kind(), 1)?;
    let mut rng = seeded_rng(spec.seed);
    let mut theta = [spec.theta0];
    let mut rows = Vec::with_capacity(spec.steps);
    let mut status = RunStatus::Completed;
    for step in 0..spec.steps {
        let p = sigmoid_scalar(theta[0]);
        let estimate = toy_estimate(spec, &f, p, &mut rng)?;
        rows.push(TrajectoryRow { step, theta: theta[0], p, estimate, true_gradient: exact_gradient(p, &f) });
        if spec.maximize {
            opt.ascend(&mut theta, &[estimate]);
        } else {
            opt.descend(&mut theta, &[estimate]);
        }
        if theta[0].abs() > DIVERGENCE_LIMIT {
            status = RunStatus::Diverged { step };
            break;
        }
    }
    Ok(OptimRun { rows, status, final_theta: theta[0], final_p: sigmoid_scalar(theta[0]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_point(p: f64) -> PGrid {
        PGrid { lo: p, hi: p, count: 1 }
    }

    #[test]
    fn toy_objective_examples() {
        let f = toy_objective(0.49).unwrap();
        assert_abs_diff_eq!(f.eval(&[1]), 0.2601, epsilon = 1e-15);
        assert_abs_diff_eq!(f.eval(&[0]), 0.2401, epsilon = 1e-15);
        let g = toy_objective(0.5).unwrap();
        assert_eq!(g.eval(&[1]), g.eval(&[0]));
        assert_eq!(exact_gradient(0.3, &g), 0.0);
        assert!(toy_objective(1.0).is_err());
        assert!(toy_objective(0.0).is_err());
    }

    #[test]
    fn default_grid() {
        let pts = PGrid::default().points();
        assert_eq!(pts.len(), 49);
        assert_abs_diff_eq!(pts[0], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(pts[48], 0.98, epsilon = 1e-15);
        let clipped = PGrid { lo: 0.0, hi: 1.0, count: 3 }.points();
        assert_eq!(clipped, vec![P_CLIP, 0.5, 1.0 - P_CLIP]);
        assert_eq!("0.1:0.9:9".parse::<PGrid>().unwrap(), PGrid { lo: 0.1, hi: 0.9, count: 9 });
        assert!("0.1:0.9".parse::<PGrid>().is_err());
        assert!("0.9:0.1:3".parse::<PGrid>().is_err());
    }

    #[test]
    fn variance_sweep_examples() {
        let mut spec = SweepSpec::defaults(SweepKind::Variance);
        spec.grid = one_point(0.5);
        spec.n_list = vec![2];
        let rows = variance_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        // alpha = 0 is LOORF on i.i.d. draws.
        assert_abs_diff_eq!(rows[0].variance, 2.5e-5, epsilon = 1e-15);
        assert_abs_diff_eq!(rows[1].variance, 0.0, epsilon = 1e-18);
        assert!(rows.iter().all(|r| r.method == Method::Enum));
    }

    #[test]
    fn variance_sweep_row_count_and_order() {
        let spec = SweepSpec::defaults(SweepKind::Variance);
        let rows = variance_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 49 * 2 * 2);
        assert_eq!(rows[0].n, 2);
        assert_eq!(rows[0].alpha, 0.0);
        assert_eq!(rows[49].alpha, 1.0);
        assert_eq!(rows[98].n, 4);
    }

    #[test]
    fn mc_variance_agrees_with_enumeration() {
        for est in [SweepEstimator::Dbsurf, SweepEstimator::Loorf, SweepEstimator::Reinforce] {
            let mut spec = SweepSpec::defaults(SweepKind::Variance);
            spec.grid = PGrid { lo: 0.2, hi: 0.8, count: 3 };
            spec.n_list = vec![3];
            spec.alpha_list = vec![0.5];
            spec.estimators = vec![est];
            spec.mc_reps = 4000;
            let exact = variance_sweep(&spec).unwrap();
            spec.method = Method::Mc;
            let mc = variance_sweep(&spec).unwrap();
            for (e, m) in exact.iter().zip(&mc) {
                assert_eq!(m.method, Method::Mc);
                assert!(m.stderr > 0.0);
                assert!((e.variance - m.variance).abs() < 4.0 * m.stderr, "{est}: {e:?} vs {m:?}");
            }
        }
    }

    #[test]
    fn oversized_enumeration_is_a_resource_error() {
        let mut spec = SweepSpec::defaults(SweepKind::Variance);
        spec.grid = one_point(0.5);
        spec.n_list = vec![MAX_PATH_LENGTH + 1];
        spec.method = Method::Enum;
        assert!(variance_sweep(&spec).unwrap_err().is_resource_guard());
        spec.method = Method::Auto;
        spec.mc_reps = 10;
        assert_eq!(variance_sweep(&spec).unwrap()[0].method, Method::Mc);
    }

    #[test]
    fn discrepancy_sweep_examples() {
        let mut spec = SweepSpec::defaults(SweepKind::Discrepancy);
        spec.grid = one_point(0.5);
        spec.n_list = vec![2];
        let rows = discrepancy_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].sampler, "iid");
        assert_abs_diff_eq!(rows[0].e_sq_discrepancy, 0.125, epsilon = 1e-15);
        assert_eq!(rows[1].sampler, "dbsample");
        assert_abs_diff_eq!(rows[1].e_sq_discrepancy, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mc_discrepancy_agrees_with_closed_form() {
        let mut spec = SweepSpec::defaults(SweepKind::Discrepancy);
        spec.grid = PGrid { lo: 0.1, hi: 0.9, count: 5 };
        spec.n_list = vec![5];
        spec.mc_reps = 3000;
        spec.method = Method::Mc;
        let rows = discrepancy_sweep(&spec).unwrap();
        for r in rows.iter().filter(|r| r.sampler == "iid") {
            let exact = r.p * (1.0 - r.p) / 5.0;
            assert!((r.e_sq_discrepancy - exact).abs() < 4.0 * r.stderr);
        }
    }

    #[test]
    fn bias_correlation_examples() {
        let mut spec = SweepSpec::defaults(SweepKind::BiasCorrelation);
        spec.grid = one_point(0.3);
        spec.alpha_list = vec![0.2, 5.0];
        let rows = bias_correlation_sweep(&spec).unwrap();
        assert_abs_diff_eq!(rows[0].bias, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rows[0].correlation, -0.2, epsilon = 1e-12);
        assert!(rows[1].bias > 0.0);
        spec.n_list = vec![3];
        assert!(bias_correlation_sweep(&spec).is_err());
    }

    #[test]
    fn correlation_matrix_examples() {
        let mut spec = SweepSpec::defaults(SweepKind::CorrelationMatrix);
        spec.grid = PGrid { lo: 0.3, hi: 0.7, count: 3 };
        spec.alpha_list = vec![0.0, 0.4];
        let rows = correlation_matrix_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 6);
        for r in &rows {
            assert!((-1.0..=1.0).contains(&r.corr));
            if r.alpha == 0.0 {
                assert_abs_diff_eq!(r.corr, 0.0, epsilon = 1e-12);
            }
            if r.alpha == 0.4 && r.i == 1 && r.j == 2 {
                assert_abs_diff_eq!(r.corr, -0.4, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn csv_has_build_id_spec_and_header() {
        let mut spec = SweepSpec::defaults(SweepKind::Discrepancy);
        spec.grid = one_point(0.5);
        spec.n_list = vec![2];
        let csv = sweep_csv(SweepKind::Discrepancy, &spec).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], format!("# {}", crate::BUILD_ID));
        assert!(lines.contains(&"# sweep=discrepancy"));
        assert!(lines.contains(&"p,n,alpha,sampler,e_sq_discrepancy,stderr,method"));
        assert_eq!(lines.iter().filter(|l| !l.starts_with('#')).count(), 3);
    }

    #[test]
    fn sweeps_do_not_depend_on_jobs() {
        let mut spec = SweepSpec::defaults(SweepKind::Variance);
        spec.grid = PGrid { lo: 0.1, hi: 0.9, count: 7 };
        spec.method = Method::Mc;
        spec.mc_reps = 50;
        let a = sweep_csv(SweepKind::Variance, &spec).unwrap();
        spec.jobs = 4;
        assert_eq!(a, sweep_csv(SweepKind::Variance, &spec).unwrap());
    }

    #[test]
    fn spec_validation() {
        let mut spec = SweepSpec::defaults(SweepKind::Variance);
        spec.mc_reps = 0;
        assert!(variance_sweep(&spec).unwrap_err().is_validation());
        let mut spec = SweepSpec::defaults(SweepKind::Variance);
        spec.estimators = vec![SweepEstimator::Kappa];
        assert!(variance_sweep(&spec).is_err());
        spec.n_list = vec![2];
        assert_eq!(variance_sweep(&spec).unwrap().len(), 98);
        assert!("dbsurf".parse::<SweepEstimator>().is_ok());
        assert!("nope".parse::<SweepKind>().is_err());
    }

    #[test]
    fn dbsurf_optimization_reaches_the_optimum() {
        let run = optimize_toy(&OptimRunSpec::default()).unwrap();
        assert_eq!(run.status, RunStatus::Completed);
        assert_eq!(run.rows.len(), 2000);
        assert!(run.final_p > 0.99, "final p {}", run.final_p);
    }

    #[test]
    fn sgd_cannot_pass_the_step_budget_ceiling() {
        // The n = 2, alpha = 1 estimate is either 0 or at most
        // (f(1) - f(0)) / 2 * debias, and debias < 1.6 on this path.
        let spec = OptimRunSpec { optimizer: StepRule::Sgd, ..OptimRunSpec::default() };
        let run = optimize_toy(&spec).unwrap();
        let max_step: f64 = run.rows.iter().map(|r| r.estimate).fold(0.0, f64::max) * spec.step_size;
        assert!(run.final_theta <= max_step * spec.steps as f64 + 1e-12);
        assert!(run.final_p < 0.99);
    }

    #[test]
    fn true_gradient_ascent_is_monotone() {
        let spec = OptimRunSpec { estimator: ToyEstimator::True, steps: 300, ..OptimRunSpec::default() };
        let run = optimize_toy(&spec).unwrap();
        let f = toy_objective(0.49).unwrap();
        let value = |p: f64| p * f.eval(&[1]) + (1.0 - p) * f.eval(&[0]);
        for w in run.rows.windows(2) {
            assert!(value(w[1].p) >= value(w[0].p));
        }
    }

    #[test]
    fn symmetric_target_has_no_drift() {
        let spec =
            OptimRunSpec { target: 0.5, estimator: ToyEstimator::Loorf, steps: 200, ..OptimRunSpec::default() };
        let run = optimize_toy(&spec).unwrap();
        assert!(run.rows.iter().all(|r| r.estimate == 0.0 && r.true_gradient == 0.0));
        assert_eq!(run.final_theta, 0.0);
    }

    #[test]
    fn divergence_guard_stops_the_run() {
        let spec = OptimRunSpec {
            estimator: ToyEstimator::True,
            optimizer: StepRule::Sgd,
            step_size: 1e5,
            ..OptimRunSpec::default()
        };
        let run = optimize_toy(&spec).unwrap();
        assert_eq!(run.status, RunStatus::Diverged { step: 0 });
        assert_eq!(run.rows.len(), 1);
        assert!(run.to_csv(&spec).contains("# status=diverged at step 0"));
    }

    #[test]
    fn optimization_is_deterministic() {
        let spec = OptimRunSpec { steps: 100, ..OptimRunSpec::default() };
        assert_eq!(optimize_toy(&spec).unwrap(), optimize_toy(&spec).unwrap());
        assert!(optimize_toy(&OptimRunSpec { steps: 0, ..spec.clone() }).is_err());
        assert!(optimize_toy(&OptimRunSpec { step_size: -1.0, ..spec }).is_err());
    }
}

//! Probability vectors, sample batches and the discrepancy of a sample set.

use crate::error::{Error, Result};

/// Tolerance for a categorical row to count as normalized.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Bernoulli success probabilities, one per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("probability vector is empty".into()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        Ok(Self(values))
    }

    /// Single-dimension convenience constructor.
    pub fn scalar(p: f64) -> Result<Self> {
        Self::new(vec![p])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Probabilities of a single categorical variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalRow(Vec<f64>);

impl CategoricalRow {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("categorical row is empty".into()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidProbability { index, value });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self(values))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("categorical row is empty".into()));
        }
        Self::new(vec![1.0 / m as f64; m])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Unconstrained logits, either one per Bernoulli dimension or a flattened
/// row-major block for softmax rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitParams(Vec<f64>);

impl LogitParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        for (index, &value) in theta.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
        }
        Ok(Self(theta))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// How the columns of a [`SampleMatrix`] are grouped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    /// One independent 0/1 column per dimension.
    Binary,
    /// Consecutive one-hot blocks, one per categorical slot, of the given sizes.
    OneHot { sizes: Vec<usize> },
}

/// A batch of `n` binary rows, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMatrix {
    n: usize,
    width: usize,
    data: Vec<u8>,
    layout: Layout,
}

impl SampleMatrix {
    /// Builds a Bernoulli-mode matrix from explicit rows.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::DimensionMismatch { expected: width, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(rows.len(), width, data, Layout::Binary)
    }

    pub fn from_flat(n: usize, width: usize, data: Vec<u8>, layout: Layout) -> Result<Self> {
        if data.len() != n * width {
            return Err(Error::DimensionMismatch { expected: n * width, got: data.len() });
        }
        if let Some(index) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidParameter(format!(
                "sample entry {index} is {}, expected 0 or 1",
                data[index]
            )));
        }
        if let Layout::OneHot { sizes } = &layout {
            if sizes.iter().sum::<usize>() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: sizes.iter().sum(),
                });
            }
            for row in data.chunks(width.max(1)).take(n) {
                let mut offset = 0;
                for &m in sizes {
                    let ones: u32 = row[offset..offset + m].iter().map(|&v| u32::from(v)).sum();
                    if ones != 1 {
                        return Err(Error::InvalidParameter(
                            "one-hot slot does not contain exactly one 1".into(),
                        ));
                    }
                    offset += m;
                }
            }
        }
        Ok(Self { n, width, data, layout })
    }

    pub(crate) fn from_parts_unchecked(n: usize, width: usize, data: Vec<u8>, layout: Layout) -> Self {
        debug_assert_eq!(data.len(), n * width);
        Self { n, width, data, layout }
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Length of each row.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    /// Category index chosen in each slot of row `i`. In Bernoulli mode this
    /// is the row itself widened to `usize`.
    pub fn indices(&self, i: usize) -> Vec<usize> {
        let row = self.row(i);
        match &self.layout {
            Layout::Binary => row.iter().map(|&v| usize::from(v)).collect(),
            Layout::OneHot { sizes } => {
                let mut offset = 0;
                sizes
                    .iter()
                    .map(|&m| {
                        let k = row[offset..offset + m].iter().position(|&v| v == 1).unwrap_or(0);
                        offset += m;
                        k
                    })
                    .collect()
            }
        }
    }
}

/// Running-average update `((i - 1) * prev + x) / i` for the `i`-th sample
/// (1-based). Shared by the samplers, the empirical mean and the oracles so
/// all of them produce bit-identical means.
#[inline]
pub fn running_mean(prev: f64, x: f64, i: usize) -> f64 {
    ((i - 1) as f64 * prev + x) / i as f64
}

#[inline]
pub fn sigmoid_scalar(theta: f64) -> f64 {
    1.0 / (1.0 + (-theta).exp())
}

/// Componentwise logistic function.
pub fn sigmoid(theta: &LogitParams) -> ProbVector {
    ProbVector(theta.values().iter().map(|&t| sigmoid_scalar(t)).collect())
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(theta_row: &[f64]) -> Result<CategoricalRow> {
    if theta_row.is_empty() {
        return Err(Error::InvalidParameter("softmax of an empty row".into()));
    }
    for (index, &value) in theta_row.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
    }
    Ok(CategoricalRow(softmax_values(theta_row)))
}

pub(crate) fn softmax_values(theta_row: &[f64]) -> Vec<f64> {
    let max = theta_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta_row.iter().map(|&t| (t - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Componentwise average of the rows, computed as a running mean.
pub fn empirical_mean(samples: &SampleMatrix) -> Result<Vec<f64>> {
    if samples.n() == 0 {
        return Err(Error::EmptySamples);
    }
    let mut mean = vec![0.0; samples.width()];
    for (i, row) in samples.rows().enumerate() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m = running_mean(*m, f64::from(x), i + 1);
        }
    }
    Ok(mean)
}

/// Discrepancy `p̂ - p` of a sample set with respect to `p`.
pub fn discrepancy(samples: &SampleMatrix, p: &[f64]) -> Result<Vec<f64>> {
    if samples.width() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: samples.width() });
    }
    let mean = empirical_mean(samples)?;
    Ok(mean.iter().zip(p).map(|(m, q)| m - q).collect())
}

/// Squared Euclidean norm.
pub fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

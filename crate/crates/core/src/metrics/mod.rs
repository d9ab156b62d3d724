//! Inception Score, KL divergence and the grey-tint score.
//!
//! The Inception Score of a set of generated images is
//! `exp(E_x[KL(p(y|x) || p(y))])`, where `p(y|x)` is a classifier's class
//! distribution for image `x` and `p(y)` is the marginal over the set. Natural
//! logarithms throughout. Class probabilities come from an external classifier
//! through a scores file ([`load_scores`]) or from the deterministic
//! [`builtin_classifier`] used in tests and mock runs.

mod classifier;
mod scores;
mod tint;

pub use classifier::builtin_classifier;
pub use scores::{load_scores, parse_scores, write_scores};
pub use tint::{grey_tint_score, mean_grey_tint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{compensated_sum, mean_and_sample_std};

/// Tolerance on `sum(p) == 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Split count used when none is configured.
pub const DEFAULT_SPLITS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("KL divergence undefined: p[{index}] > 0 where q[{index}] = 0")]
    SingularSupport { index: usize },
    #[error("probability vector has a negative or non-finite entry at {index}")]
    InvalidEntry { index: usize },
    #[error("probability vector sums to {sum}, not 1")]
    NotNormalizedVector { sum: f64 },
    #[error("score set is empty")]
    EmptyScoreSet,
    #[error("{rows} rows cannot fill {splits} splits")]
    TooFewRows { rows: usize, splits: usize },
    #[error("image is empty")]
    EmptyImage,
    #[error("line {line}: malformed row: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("line {line}: probabilities sum to {sum}")]
    NotNormalized { line: usize, sum: f64 },
    #[error("line {line}: expected {expected} probabilities, found {found}")]
    RowDimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("n_classes must be at least 2")]
    TooFewClasses,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MetricsError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// A discrete distribution over class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(p: Vec<f64>) -> Result<Self, MetricsError> {
        if let Some(index) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(MetricsError::InvalidEntry { index });
        }
        let sum = compensated_sum(p.iter().copied());
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(MetricsError::NotNormalizedVector { sum });
        }
        Ok(Self(p))
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(w: &[f64]) -> Result<Self, MetricsError> {
        let total = compensated_sum(w.iter().copied());
        if total.is_nan() || total <= 0.0 {
            return Err(MetricsError::NotNormalizedVector { sum: total });
        }
        Self::new(w.iter().map(|v| v / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = MetricsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

/// Per-image class distributions for one set of generated images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    rows: Vec<(String, ProbabilityVector)>,
    n_classes: usize,
}

impl ScoreSet {
    pub fn new(rows: Vec<(String, ProbabilityVector)>) -> Result<Self, MetricsError> {
        let n_classes = rows.first().map_or(0, |(_, p)| p.len());
        if let Some((_, p)) = rows.iter().find(|(_, p)| p.len() != n_classes) {
            return Err(MetricsError::DimensionMismatch {
                expected: n_classes,
                found: p.len(),
            });
        }
        Ok(Self { rows, n_classes })
    }

    pub fn rows(&self) -> &[(String, ProbabilityVector)] {
        &self.rows
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ISResult {
    pub mean: f64,
    pub std: f64,
    pub n_splits: usize,
}

/// `sum_i p_i ln(p_i / q_i)` with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64, MetricsError> {
    kl_slices(p.as_slice(), q.as_slice())
}

fn kl_slices(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut terms = Vec::with_capacity(p.len());
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(MetricsError::SingularSupport { index });
        }
        terms.push(pi * (pi / qi).ln());
    }
    // Rounding can push a true zero slightly negative.
    Ok(compensated_sum(terms).max(0.0))
}

/// Inception Score over `n_splits` contiguous, near-equal splits in input order.
///
/// Split `i` covers rows `[i*n/k, (i+1)*n/k)`. `std` is the sample standard
/// deviation of the per-split scores, 0 for a single split.
pub fn inception_score(scores: &ScoreSet, n_splits: usize) -> Result<ISResult, MetricsError> {
    let n = scores.len();
    if n == 0 {
        return Err(MetricsError::EmptyScoreSet);
    }
    if n_splits == 0 || n < n_splits {
        return Err(MetricsError::TooFewRows { rows: n, splits: n_splits });
    }
    let per_split: Vec<f64> = (0..n_splits)
        .map(|i| {
            let start = i * n / n_splits;
            let end = (i + 1) * n / n_splits;
            split_score(&scores.rows[start..end], scores.n_classes)
        })
        .collect::<Result<_, _>>()?;
    let (mean, std) = mean_and_sample_std(&per_split).expect("at least one split");
    Ok(ISResult { mean, std, n_splits })
}

fn split_score(rows: &[(String, ProbabilityVector)], n_classes: usize) -> Result<f64, MetricsError> {
    let count = rows.len() as f64;
    let marginal: Vec<f64> = (0..n_classes)
        .map(|c| compensated_sum(rows.iter().map(|(_, p)| p.0[c])) / count)
        .collect();
    let kls: Vec<f64> = rows
        .iter()
        .map(|(_, p)| kl_slices(&p.0, &marginal))
        .collect::<Result<_, _>>()?;
    Ok((compensated_sum(kls) / count).exp())
}

//! Sorting for auctions: exact hard argsort for inference and a
//! row-stochastic softmax relaxation (NeuralSort-style) for training.
//!
//! For scores `r`, row `k` of the relaxed matrix is
//! `softmax(((N + 1 - 2k) r - A 1) / tau)` where `A[i][j] = |r_i - r_j|`.
//! At `tau -> 0` each row collapses onto the k-th largest score, recovering
//! the hard permutation; the hard path here sorts directly instead of
//! taking that limit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{DiffError, Graph, NodeId, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum SortError {
    #[error("temperature must be > 0, got {0} (use hard_sort for the tau = 0 limit)")]
    NonPositiveTemperature(f64),
    #[error("scores must be finite")]
    NonFiniteScores,
    #[error("scores are empty")]
    EmptyScores,
    #[error("length mismatch: permutation is over {expected} items, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("slot count {k} exceeds item count {n}")]
    TooManySlots { k: usize, n: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Row-stochastic relaxed permutation: `matrix[k][i]` is the choice
/// probability of item `i` for rank `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPermutation {
    pub matrix: Tensor,
    pub tau: f64,
}

/// Exact descending argsort. `order()[k]` is the original index holding
/// rank `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardPermutation {
    order: Vec<usize>,
}

/// Tie handling for [`hard_sort_with`]. The default everywhere is the
/// deterministic lowest-original-index rule; seeded random tie-breaking is
/// available for simulations that want it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    LowestIndex,
    Seeded(u64),
}

impl HardPermutation {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Rank (0-based) of an original index.
    pub fn rank_of(&self, index: usize) -> Option<usize> {
        self.order.iter().position(|&i| i == index)
    }

    /// The 0/1 permutation matrix with one 1 per row and column.
    pub fn to_matrix(&self) -> Tensor {
        let n = self.order.len();
        let mut m = Tensor::zeros(n, n);
        for (k, &i) in self.order.iter().enumerate() {
            m.set(k, i, 1.0);
        }
        m
    }
}

/// Descending argsort with ties broken by lowest original index.
pub fn hard_sort(scores: &[f64]) -> HardPermutation {
    hard_sort_with(scores, TieBreak::LowestIndex)
}

pub fn hard_sort_with(scores: &[f64], tie: TieBreak) -> HardPermutation {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    match tie {
        TieBreak::LowestIndex => {
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        }
        TieBreak::Seeded(seed) => {
            // Shuffle, then stable-sort by score only: equal scores keep
            // their seeded-random relative order.
            order.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        }
    }
    HardPermutation { order }
}

/// Relaxed argsort at temperature `tau > 0`.
pub fn soft_sort(scores: &[f64], tau: f64) -> Result<SoftPermutation, SortError> {
    if scores.is_empty() {
        return Err(SortError::EmptyScores);
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(SortError::NonFiniteScores);
    }
    if tau <= 0.0 || tau.is_nan() {
        return Err(SortError::NonPositiveTemperature(tau));
    }
    let g = Graph::new();
    let r = g.constant(Tensor::column(scores));
    let m = soft_sort_node(&g, r, tau)?;
    Ok(SoftPermutation { matrix: g.value(m), tau })
}

/// Differentiable relaxed argsort over a column-vector score node.
pub fn soft_sort_node(g: &Graph, scores: NodeId, tau: f64) -> Result<NodeId, SortError> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(SortError::NonPositiveTemperature(tau));
    }
    let (n, cols) = g.shape(scores);
    if cols != 1 {
        return Err(SortError::Diff(DiffError::InvalidShape {
            op: "soft_sort",
            shape: (n, cols),
            reason: "scores must be a column vector",
        }));
    }
    let ones_row = g.constant(Tensor::from_vec(1, n, vec![1.0; n]));
    let ones_col = g.constant(Tensor::from_vec(n, 1, vec![1.0; n]));

    // A[i][j] = |r_i - r_j|; row sums A 1 appear in every row of the logit
    // matrix.
    let spread = g.matmul(scores, ones_row)?; // [i][j] = r_i
    let pairwise = g.abs(g.sub(spread, g.transpose(spread)?)?)?;
    let abs_sums = g.matmul(pairwise, ones_col)?; // n x 1

    // C[k][i] = (n + 1 - 2(k+1)) r_i - abs_sums_i, for 0-based k.
    let coef = g.constant(Tensor::from_fn(n, 1, |k, _| (n as f64) - 1.0 - 2.0 * k as f64));
    let scaled = g.matmul(coef, g.transpose(scores)?)?;
    let logits = g.sub(scaled, g.matmul(ones_col, g.transpose(abs_sums)?)?)?;
    Ok(g.softmax_row(g.scale(logits, 1.0 / tau)?)?)
}

/// Top-`k` rows of a (soft or hard) permutation matrix times a value
/// vector: the values rearranged into score order, differentiably when the
/// matrix is soft.
pub fn sorted_values(matrix: &Tensor, values: &[f64], k: usize) -> Result<Vec<f64>, SortError> {
    let n = matrix.rows();
    if matrix.cols() != values.len() {
        return Err(SortError::LengthMismatch { expected: matrix.cols(), got: values.len() });
    }
    if k > n {
        return Err(SortError::TooManySlots { k, n });
    }
    let mut out = Vec::with_capacity(k);
    for row in 0..k {
        out.push(matrix.row_slice(row).iter().zip(values).map(|(&m, &v)| m * v).sum());
    }
    Ok(out)
}

/// Payments rearranged into score order ([`sorted_values`] with payments).
pub fn sorted_payments(perm: &SoftPermutation, payments: &[f64], k: usize) -> Result<Vec<f64>, SortError> {
    sorted_values(&perm.matrix, payments, k)
}

/// Per-slot expected metric totals ([`sorted_values`] with aggregated
/// per-ad metrics).
pub fn expected_metrics(perm: &SoftPermutation, totals: &[f64], k: usize) -> Result<Vec<f64>, SortError> {
    sorted_values(&perm.matrix, totals, k)
}

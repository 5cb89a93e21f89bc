//! Context-aware rank scores from a partially monotone min/max network.
//!
//! The score of an ad is `min` over `Q` groups of `max` over `Z` affine
//! pieces `e^{w} * bid + w' . x + alpha`. The bid slope is `e^w > 0` by
//! construction, so the score is strictly increasing in the bid no matter
//! what training does — the allocation-monotonicity half of incentive
//! compatibility is baked into the architecture.
//!
//! Because every piece is affine and strictly increasing in the bid, the
//! map has an exact closed-form inverse: invert each piece, take `min`
//! over the pieces of a group (inverting the inner `max`), then `max` over
//! groups (inverting the outer `min`). [`MinMaxParams::inverse_rank_score`]
//! implements that, and [`MinMaxParams::payment`] uses it to charge each
//! winner the minimum bid that keeps the slot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DiffError, Graph, NodeId, Tensor};
use crate::model::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxParams {
    groups: usize,
    pieces: usize,
    input_dim: usize,
    /// Unconstrained `w`; the effective bid slope of a piece is `e^w`.
    pub bid_weights: Tensor,
    /// Per-piece weights over the augmented (bid-free) input, `QZ x d`.
    pub input_weights: Tensor,
    pub intercepts: Tensor,
}

impl MinMaxParams {
    /// Default capacity: 5 groups of 20 affine pieces.
    pub const DEFAULT_GROUPS: usize = 5;
    pub const DEFAULT_PIECES: usize = 20;

    /// `w = 0` (unit bid slope, an eCPM-like warm start); input weights and
    /// intercepts small uniform.
    pub fn init(groups: usize, pieces: usize, input_dim: usize, rng: &mut impl Rng) -> Self {
        assert!(groups >= 1 && pieces >= 1, "need at least one group and one piece");
        let qz = groups * pieces;
        MinMaxParams {
            groups,
            pieces,
            input_dim,
            bid_weights: Tensor::zeros(qz, 1),
            input_weights: Tensor::from_fn(qz, input_dim, |_, _| rng.random_range(-0.05..0.05)),
            intercepts: Tensor::from_fn(qz, 1, |_, _| rng.random_range(-0.05..0.05)),
        }
    }

    /// The identity configuration: one piece, unit slope, no feature terms.
    /// `rank_score(b, x) == b` exactly.
    pub fn bid_identity(input_dim: usize) -> Self {
        MinMaxParams {
            groups: 1,
            pieces: 1,
            input_dim,
            bid_weights: Tensor::zeros(1, 1),
            input_weights: Tensor::zeros(1, input_dim),
            intercepts: Tensor::zeros(1, 1),
        }
    }

    /// Build from explicit per-piece parameters (row-major over groups then
    /// pieces), mostly for tests and worked examples.
    pub fn from_pieces(
        groups: usize,
        pieces: usize,
        bid_weights: Vec<f64>,
        input_weights: Vec<Vec<f64>>,
        intercepts: Vec<f64>,
    ) -> Self {
        let qz = groups * pieces;
        assert_eq!(bid_weights.len(), qz);
        assert_eq!(input_weights.len(), qz);
        assert_eq!(intercepts.len(), qz);
        let input_dim = input_weights[0].len();
        let flat: Vec<f64> = input_weights.into_iter().flatten().collect();
        MinMaxParams {
            groups,
            pieces,
            input_dim,
            bid_weights: Tensor::column(&bid_weights),
            input_weights: Tensor::from_vec(qz, input_dim, flat),
            intercepts: Tensor::column(&intercepts),
        }
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn check_input(&self, bid: f64, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::FeatureDim { expected: self.input_dim, got: x.len() });
        }
        if !bid.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { what: "rank score input" });
        }
        Ok(())
    }

    fn piece_linear(&self, idx: usize, x: &[f64]) -> f64 {
        let row = self.input_weights.row_slice(idx);
        row.iter().zip(x).map(|(&w, &v)| w * v).sum::<f64>() + self.intercepts.get(idx, 0)
    }

    /// `min_q max_z (e^{w_qz} b + w'_qz . x + alpha_qz)`.
    pub fn rank_score(&self, bid: f64, x: &[f64]) -> Result<f64, ModelError> {
        self.check_input(bid, x)?;
        let mut over_groups = f64::INFINITY;
        for q in 0..self.groups {
            let mut over_pieces = f64::NEG_INFINITY;
            for z in 0..self.pieces {
                let idx = q * self.pieces + z;
                let v = self.bid_weights.get(idx, 0).exp() * bid + self.piece_linear(idx, x);
                over_pieces = over_pieces.max(v);
            }
            over_groups = over_groups.min(over_pieces);
        }
        Ok(over_groups)
    }

    /// Exact inverse: the bid at which [`Self::rank_score`] reaches `y`.
    ///
    /// `max_q min_z e^{-w_qz} (y - alpha_qz - w'_qz . x)` — note the
    /// min/max order is the inverse of the forward pass (each group's inner
    /// `max` of increasing pieces inverts to a `min` of piece inverses, the
    /// outer `min` to a `max`); the round-trip identity pins this down.
    pub fn inverse_rank_score(&self, y: f64, x: &[f64]) -> Result<f64, ModelError> {
        if !y.is_finite() {
            return Err(ModelError::NonFinite { what: "inverse rank score target" });
        }
        self.check_input(0.0, x)?;
        let mut over_groups = f64::NEG_INFINITY;
        for q in 0..self.groups {
            let mut over_pieces = f64::INFINITY;
            for z in 0..self.pieces {
                let idx = q * self.pieces + z;
                let v = (-self.bid_weights.get(idx, 0)).exp() * (y - self.piece_linear(idx, x));
                over_pieces = over_pieces.min(v);
            }
            over_groups = over_groups.max(over_pieces);
        }
        Ok(over_groups)
    }

    /// Critical-price payment for the winner at `position` (0-based) in a
    /// non-increasing score vector: the inverse at the next-highest score,
    /// or at the reserve score 0 when no ad follows, clamped to `[0, bid]`.
    pub fn payment(
        &self,
        position: usize,
        sorted_scores: &[f64],
        x: &[f64],
        bid: f64,
    ) -> Result<f64, ModelError> {
        if position >= sorted_scores.len() {
            return Err(ModelError::IndexOutOfRange { index: position, n: sorted_scores.len() });
        }
        if sorted_scores.windows(2).any(|w| w[0] < w[1]) {
            return Err(ModelError::UnsortedScores);
        }
        let next = sorted_scores.get(position + 1).copied().unwrap_or(0.0);
        let p = self.inverse_rank_score(next, x)?;
        Ok(p.clamp(0.0, bid))
    }

    /// Parameter tensors in flattening order (bid weights, input weights,
    /// intercepts).
    pub fn param_tensors(&self) -> [&Tensor; 3] {
        [&self.bid_weights, &self.input_weights, &self.intercepts]
    }

    pub fn param_tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.bid_weights, &mut self.input_weights, &mut self.intercepts]
    }

    pub fn param_nodes(&self, g: &Graph) -> ScorerNodes {
        ScorerNodes {
            bid_weights: g.leaf(self.bid_weights.clone()),
            input_weights: g.leaf(self.input_weights.clone()),
            intercepts: g.leaf(self.intercepts.clone()),
            groups: self.groups,
            pieces: self.pieces,
        }
    }
}

/// Leaf handles to the scorer parameters on a graph.
#[derive(Clone, Copy)]
pub struct ScorerNodes {
    pub bid_weights: NodeId,
    pub input_weights: NodeId,
    pub intercepts: NodeId,
    groups: usize,
    pieces: usize,
}

impl ScorerNodes {
    pub fn ids(&self) -> [NodeId; 3] {
        [self.bid_weights, self.input_weights, self.intercepts]
    }
}

/// Derived nodes that depend on the current parameter values; must be
/// rebuilt after every optimizer step (i.e., after a tape rewind).
pub struct ScorerBatch {
    nodes: ScorerNodes,
    exp_w: NodeId,
    exp_neg_w: NodeId,
}

pub fn scorer_batch(g: &Graph, nodes: ScorerNodes) -> Result<ScorerBatch, DiffError> {
    Ok(ScorerBatch {
        nodes,
        exp_w: g.exp(nodes.bid_weights)?,
        exp_neg_w: g.exp(g.neg(nodes.bid_weights)?)?,
    })
}

/// A scored ad on the tape: the scalar score plus the reusable per-piece
/// linear term `w' . x + alpha` needed by the inverse.
pub struct ScoreNode {
    pub score: NodeId,
    pub linear: NodeId,
}

/// Differentiable version of [`MinMaxParams::rank_score`]. `input` is the
/// augmented-feature column (typically `concat_rows` of constant features
/// and a context-embedding node); the bid is a constant.
pub fn rank_score_node(
    g: &Graph,
    batch: &ScorerBatch,
    bid: f64,
    input: NodeId,
) -> Result<ScoreNode, DiffError> {
    let wx = g.matmul(batch.nodes.input_weights, input)?;
    let linear = g.add(wx, batch.nodes.intercepts)?;
    let pieces = g.add(g.scale(batch.exp_w, bid)?, linear)?;
    let grid = g.reshape(pieces, batch.nodes.groups, batch.nodes.pieces)?;
    let score = g.min_reduce(g.max_rows(grid)?)?;
    Ok(ScoreNode { score, linear })
}

/// Differentiable inverse at a scalar target node, using the `linear` term
/// produced by [`rank_score_node`] for the same ad. Unclamped.
pub fn inverse_node(
    g: &Graph,
    batch: &ScorerBatch,
    linear: NodeId,
    target: NodeId,
) -> Result<NodeId, DiffError> {
    let diff = g.sub(target, linear)?;
    let candidates = g.mul(batch.exp_neg_w, diff)?;
    let grid = g.reshape(candidates, batch.nodes.groups, batch.nodes.pieces)?;
    g.max_reduce(g.min_rows(grid)?)
}

/// Clamp a payment node to `[0, bid]` on the tape.
pub fn clamp_payment_node(g: &Graph, payment: NodeId, bid: f64) -> Result<NodeId, DiffError> {
    let zero = g.scalar(0.0);
    let floored = g.max_reduce(g.stack_scalars(&[payment, zero])?)?;
    let cap = g.scalar(bid);
    g.min_reduce(g.stack_scalars(&[floored, cap])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// max(b, 2b - 1) as one group of two pieces: slopes e^0 = 1 and
    /// e^{ln 2} = 2, intercepts 0 and -1.
    fn two_piece_max() -> MinMaxParams {
        MinMaxParams::from_pieces(
            1,
            2,
            vec![0.0, 2.0f64.ln()],
            vec![vec![0.0], vec![0.0]],
            vec![0.0, -1.0],
        )
    }

    #[test]
    fn identity_configuration_scores_the_bid() {
        let p = MinMaxParams::bid_identity(2);
        for bid in [0.1, 1.0, 3.7] {
            assert_eq!(p.rank_score(bid, &[5.0, -2.0]).unwrap(), bid);
            assert_eq!(p.inverse_rank_score(bid, &[5.0, -2.0]).unwrap(), bid);
        }
    }

    #[test]
    fn two_piece_example_by_hand() {
        // r(b) = max(b, 2b - 1): r(0.5) = 0.5, r(2) = 3.
        let p = two_piece_max();
        assert_eq!(p.rank_score(0.5, &[0.0]).unwrap(), 0.5);
        assert_eq!(p.rank_score(2.0, &[0.0]).unwrap(), 3.0);
        // Inverse at y = 3: per-piece inverses are 3 and 2; min is 2.
        assert_eq!(p.inverse_rank_score(3.0, &[0.0]).unwrap(), 2.0);
        assert_eq!(p.rank_score(2.0, &[0.0]).unwrap(), 3.0);
    }

    #[test]
    fn strictly_increasing_in_bid() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = MinMaxParams::init(3, 4, 3, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: f64 = rng.random_range(0.01..10.0);
            let delta: f64 = rng.random_range(1e-4..1.0);
            let lo = p.rank_score(b, &x).unwrap();
            let hi = p.rank_score(b + delta, &x).unwrap();
            assert!(hi > lo, "score must strictly increase: {lo} vs {hi}");
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let p = MinMaxParams::init(4, 5, 2, &mut rng);
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
            let b: f64 = rng.random_range(0.01..20.0);
            let y = p.rank_score(b, &x).unwrap();
            let back = p.inverse_rank_score(y, &x).unwrap();
            assert!((back - b).abs() <= 1e-6 * b.max(1.0), "b {b}, back {back}");
        }
    }

    #[test]
    fn payment_reduces_to_second_score_under_identity() {
        let p = MinMaxParams::bid_identity(1);
        let pay = p.payment(0, &[3.0, 2.0], &[0.0], 3.0).unwrap();
        assert_eq!(pay, 2.0);
    }

    #[test]
    fn single_candidate_pays_the_reserve() {
        let p = MinMaxParams::bid_identity(1);
        // inverse(0) = 0 under the identity map, clamped into [0, bid].
        assert_eq!(p.payment(0, &[4.0], &[0.0], 4.0).unwrap(), 0.0);
    }

    #[test]
    fn unsorted_scores_are_rejected() {
        let p = MinMaxParams::bid_identity(1);
        assert_eq!(p.payment(0, &[1.0, 2.0], &[0.0], 1.0).unwrap_err(), ModelError::UnsortedScores);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let p = MinMaxParams::bid_identity(1);
        assert!(p.rank_score(f64::NAN, &[0.0]).is_err());
        assert!(p.rank_score(1.0, &[f64::INFINITY]).is_err());
        assert!(p.inverse_rank_score(f64::NAN, &[0.0]).is_err());
    }

    #[test]
    fn payment_matches_grid_search_critical_bid() {
        // Brute-force oracle: the smallest bid on a 1e-4 grid that still
        // keeps slot `position` when all rival scores stay fixed. Bisection
        // over the grid is valid because the score is monotone in the bid
        // (verified above); spot-check with a linear scan at coarse scale.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for round in 0..50 {
            let p = MinMaxParams::init(3, 4, 2, &mut rng);
            let n = 5;
            let xs: Vec<Vec<f64>> =
                (0..n).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let bids: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..4.0)).collect();
            let mut scores: Vec<f64> =
                (0..n).map(|i| p.rank_score(bids[i], &xs[i]).unwrap()).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            scores.sort_by(|a, b| b.total_cmp(a));

            let position = round % 2; // test the top two slots
            let winner = order[position];
            let pay = p.payment(position, &scores, &xs[winner], bids[winner]).unwrap();

            // Grid bisection for the minimal slot-keeping bid.
            let keeps_slot = |bid: f64| {
                let s = p.rank_score(bid, &xs[winner]).unwrap();
                let higher = (0..n)
                    .filter(|&j| j != winner)
                    .filter(|&j| p.rank_score(bids[j], &xs[j]).unwrap() > s)
                    .count();
                higher <= position
            };
            let step = 1e-4;
            let mut lo = 0u64; // lowest grid index that might keep the slot
            let mut hi = (bids[winner] / step).ceil() as u64;
            assert!(keeps_slot(hi as f64 * step));
            while lo < hi {
                let mid = (lo + hi) / 2;
                if keeps_slot(mid as f64 * step) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            let oracle = hi as f64 * step;
            assert!(
                (pay - oracle).abs() <= step,
                "round {round}: payment {pay} vs grid oracle {oracle}"
            );
        }
    }

    #[test]
    fn graph_score_and_inverse_match_plain_path() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        for _ in 0..50 {
            let p = MinMaxParams::init(3, 4, 3, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bid: f64 = rng.random_range(0.05..5.0);
            let y: f64 = rng.random_range(-2.0..4.0);

            let g = Graph::new();
            let batch = scorer_batch(&g, p.param_nodes(&g)).unwrap();
            let input = g.constant(Tensor::column(&x));
            let scored = rank_score_node(&g, &batch, bid, input).unwrap();
            let target = g.scalar(y);
            let inv = inverse_node(&g, &batch, scored.linear, target).unwrap();

            let plain_score = p.rank_score(bid, &x).unwrap();
            let plain_inv = p.inverse_rank_score(y, &x).unwrap();
            assert!((g.scalar_value(scored.score).unwrap() - plain_score).abs() < 1e-12);
            assert!((g.scalar_value(inv).unwrap() - plain_inv).abs() < 1e-12);
        }
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        use crate::autodiff::gradcheck::{central_difference, check_close};

        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let p = MinMaxParams::init(2, 3, 2, &mut rng);
        let x = [0.4, -0.9];
        let bid = 1.3;

        // Flatten all three parameter tensors into one probe vector.
        let flatten = |p: &MinMaxParams| {
            let mut v = p.bid_weights.data().to_vec();
            v.extend_from_slice(p.input_weights.data());
            v.extend_from_slice(p.intercepts.data());
            v
        };
        let rebuild = |flat: &[f64]| {
            let qz = 6;
            let mut p2 = p.clone();
            p2.bid_weights = Tensor::from_vec(qz, 1, flat[..qz].to_vec());
            p2.input_weights = Tensor::from_vec(qz, 2, flat[qz..qz * 3].to_vec());
            p2.intercepts = Tensor::from_vec(qz, 1, flat[qz * 3..].to_vec());
            p2
        };

        let flat = flatten(&p);
        let g = Graph::new();
        let nodes = p.param_nodes(&g);
        let batch = scorer_batch(&g, nodes).unwrap();
        let input = g.constant(Tensor::column(&x));
        let scored = rank_score_node(&g, &batch, bid, input).unwrap();
        g.backward(scored.score).unwrap();
        let mut analytic = g.grad(nodes.bid_weights).data().to_vec();
        analytic.extend_from_slice(g.grad(nodes.input_weights).data());
        analytic.extend_from_slice(g.grad(nodes.intercepts).data());

        let numeric = central_difference(
            |flat| rebuild(flat).rank_score(bid, &x).unwrap(),
            &flat,
            1e-6,
        );
        check_close(&analytic, &numeric, 1e-4, 1e-7).unwrap();
    }
}

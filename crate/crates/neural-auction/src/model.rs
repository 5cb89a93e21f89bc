//! The full learned auction model: set encoder + monotone scorer, with the
//! normalization statistics and objective they were trained under.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffError, Tensor};
use crate::data::{AuctionInstance, MetricId, ObjectiveSpec};
use crate::encoder::{EncoderDims, Pooling, SetEncoderParams};
use crate::rankscore::MinMaxParams;
use crate::seeds;
use crate::sort::{hard_sort, HardPermutation};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("index {index} out of range for {n} items")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("scores must be sorted non-increasing")]
    UnsortedScores,
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Running per-metric location/scale, so differently denominated metrics
/// can share one objective. Welford updates; population std with a small
/// floor. Untouched metrics normalize to identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NormStats {
    cells: [Welford; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Stats that leave every value unchanged.
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn update(&mut self, metric: MetricId, x: f64) {
        let cell = &mut self.cells[metric.index()];
        cell.count += 1;
        let delta = x - cell.mean;
        cell.mean += delta / cell.count as f64;
        cell.m2 += delta * (x - cell.mean);
    }

    pub fn normalize(&self, metric: MetricId, x: f64) -> f64 {
        let cell = &self.cells[metric.index()];
        if cell.count == 0 {
            return x;
        }
        (x - cell.mean) / self.std(metric)
    }

    pub fn mean(&self, metric: MetricId) -> f64 {
        self.cells[metric.index()].mean
    }

    pub fn std(&self, metric: MetricId) -> f64 {
        let cell = &self.cells[metric.index()];
        if cell.count == 0 {
            return 1.0;
        }
        (cell.m2 / cell.count as f64).sqrt().max(STD_FLOOR)
    }

    pub fn count(&self, metric: MetricId) -> u64 {
        self.cells[metric.index()].count
    }
}

/// All learnable state plus the evaluation context it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionModel {
    pub encoder: SetEncoderParams,
    pub scorer: MinMaxParams,
    pub norm: NormStats,
    pub objective: ObjectiveSpec,
}

/// A fully scored auction under the current parameters: per-ad embeddings,
/// scores, the descending ranking, and critical prices for every ad in that
/// ranking (the last ad prices against the reserve score 0).
#[derive(Debug, Clone)]
pub struct ScoredAuction {
    pub embeddings: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub order: HardPermutation,
    /// Indexed by candidate, not by slot.
    pub payments: Vec<f64>,
}

impl AuctionModel {
    pub fn init(
        feature_dim: usize,
        dims: EncoderDims,
        pool: Pooling,
        groups: usize,
        pieces: usize,
        objective: ObjectiveSpec,
        seed: u64,
    ) -> Self {
        assert_eq!(dims.input, feature_dim, "encoder input width must match the feature dim");
        let mut rng = ChaCha12Rng::seed_from_u64(seeds::child(seed, "init"));
        let encoder = SetEncoderParams::init(dims, pool, &mut rng);
        let scorer = MinMaxParams::init(groups, pieces, feature_dim + dims.embedding, &mut rng);
        AuctionModel { encoder, scorer, norm: NormStats::identity(), objective }
    }

    /// Pass-through configuration: the rank score equals the bid, so the
    /// mechanism degenerates to bid-ordered allocation with second-bid
    /// payments. Useful as a reference point and in tests.
    pub fn bid_identity(feature_dim: usize, objective: ObjectiveSpec) -> Self {
        let dims = EncoderDims { input: feature_dim, hidden1: 4, hidden2: 4, embedding: 2 };
        AuctionModel {
            encoder: SetEncoderParams::zeros(dims, Pooling::Mean),
            scorer: MinMaxParams::bid_identity(feature_dim + dims.embedding),
            norm: NormStats::identity(),
            objective,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn augmented_dim(&self) -> usize {
        self.feature_dim() + self.encoder.embedding_dim()
    }

    pub fn augmented_input(&self, features: &[f64], embedding: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(features.len() + embedding.len());
        x.extend_from_slice(features);
        x.extend_from_slice(embedding);
        x
    }

    /// Score one auction and compute every ad's critical price under the
    /// resulting ranking.
    pub fn score_auction(&self, auction: &AuctionInstance) -> Result<ScoredAuction, ModelError> {
        let features: Vec<Vec<f64>> =
            auction.candidates.iter().map(|c| c.features.clone()).collect();
        let embeddings = self.encoder.encode_auction(&features)?;
        let mut scores = Vec::with_capacity(auction.n());
        for (cand, emb) in auction.candidates.iter().zip(&embeddings) {
            let x = self.augmented_input(&cand.features, emb);
            scores.push(self.scorer.rank_score(cand.bid, &x)?);
        }
        let order = hard_sort(&scores);
        let mut payments = vec![0.0; auction.n()];
        for (rank, &idx) in order.order().iter().enumerate() {
            let next = order.order().get(rank + 1).map(|&j| scores[j]).unwrap_or(0.0);
            let cand = &auction.candidates[idx];
            let x = self.augmented_input(&cand.features, &embeddings[idx]);
            payments[idx] = self.scorer.inverse_rank_score(next, &x)?.clamp(0.0, cand.bid);
        }
        Ok(ScoredAuction { embeddings, scores, order, payments })
    }

    /// Parameter tensors in their canonical flattening order (encoder
    /// layers, then scorer).
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.encoder.param_tensors().to_vec();
        v.extend(self.scorer.param_tensors());
        v
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let (encoder, scorer) = (&mut self.encoder, &mut self.scorer);
        let mut v: Vec<&mut Tensor> = encoder.param_tensors_mut().into_iter().collect();
        v.extend(scorer.param_tensors_mut());
        v
    }

    pub fn param_len(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_len());
        for t in self.param_tensors() {
            flat.extend_from_slice(t.data());
        }
        flat
    }

    pub fn load_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.param_tensors_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

/// The trained model wrapped as a runnable mechanism: hard (zero
/// temperature) descending sort on rank scores, critical prices from the
/// closed-form inverse, clamped into `[0, bid]`.
///
/// Embeddings are bid-independent, so a prepared auction re-scores only the
/// perturbed ad on bid perturbations.
pub struct LearnedAuction {
    model: AuctionModel,
}

impl LearnedAuction {
    pub fn new(model: AuctionModel) -> Self {
        LearnedAuction { model }
    }

    pub fn model(&self) -> &AuctionModel {
        &self.model
    }
}

struct LearnedRule<'a> {
    scorer: &'a MinMaxParams,
    augmented: Vec<Vec<f64>>,
}

impl crate::evaluation::ScoreRule for LearnedRule<'_> {
    fn score(&self, idx: usize, bid: f64) -> f64 {
        self.scorer.rank_score(bid, &self.augmented[idx]).expect("inputs validated in prepare")
    }

    fn payment(&self, idx: usize, bid: f64, next_score: f64) -> f64 {
        self.scorer
            .inverse_rank_score(next_score, &self.augmented[idx])
            .expect("inputs validated in prepare")
            .clamp(0.0, bid)
    }
}

impl crate::evaluation::Mechanism for LearnedAuction {
    fn name(&self) -> String {
        "learned".into()
    }

    fn prepare<'a>(
        &'a self,
        auction: &'a AuctionInstance,
    ) -> Result<crate::evaluation::Prepared<'a>, crate::evaluation::EvalError> {
        let features: Vec<Vec<f64>> =
            auction.candidates.iter().map(|c| c.features.clone()).collect();
        let embeddings = self.model.encoder.encode_auction(&features)?;
        let augmented: Vec<Vec<f64>> = auction
            .candidates
            .iter()
            .zip(&embeddings)
            .map(|(c, emb)| self.model.augmented_input(&c.features, emb))
            .collect();
        Ok(crate::evaluation::Prepared::new(
            auction,
            Box::new(LearnedRule { scorer: &self.model.scorer, augmented }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GeneratorConfig};

    #[test]
    fn welford_matches_direct_moments() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let mut stats = NormStats::identity();
        for &x in &xs {
            stats.update(MetricId::Ctr, x);
        }
        let mean = xs.iter().sum::<f64>() / 4.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!((stats.mean(MetricId::Ctr) - mean).abs() < 1e-12);
        assert!((stats.std(MetricId::Ctr) - var.sqrt()).abs() < 1e-12);
        // Untouched metric stays identity.
        assert_eq!(stats.normalize(MetricId::Gpm, 3.5), 3.5);
    }

    #[test]
    fn identity_model_ranks_by_bid_and_charges_second_bid() {
        let cfg = GeneratorConfig::default();
        let auction = generate_dataset(&cfg, 1).unwrap().next().unwrap();
        let model = AuctionModel::bid_identity(cfg.feature_dim(), ObjectiveSpec::single(MetricId::Ctr));
        let scored = model.score_auction(&auction).unwrap();

        let mut expect: Vec<usize> = (0..auction.n()).collect();
        expect.sort_by(|&a, &b| {
            auction.candidates[b].bid.total_cmp(&auction.candidates[a].bid).then(a.cmp(&b))
        });
        assert_eq!(scored.order.order(), expect.as_slice());
        for (rank, &idx) in scored.order.order().iter().enumerate() {
            let next_bid =
                scored.order.order().get(rank + 1).map(|&j| auction.candidates[j].bid).unwrap_or(0.0);
            assert!((scored.payments[idx] - next_bid).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_param_round_trip() {
        let model = AuctionModel::init(
            5,
            EncoderDims { input: 5, hidden1: 8, hidden2: 6, embedding: 3 },
            Pooling::Mean,
            2,
            3,
            ObjectiveSpec::single(MetricId::Revenue),
            3,
        );
        let flat = model.flatten_params();
        let mut other = model.clone();
        other.load_flat_params(&vec![0.0; flat.len()]);
        assert_ne!(other, model);
        other.load_flat_params(&flat);
        assert_eq!(other, model);
    }
}

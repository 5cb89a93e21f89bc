//! Offline end-to-end training.
//!
//! Each minibatch of page views is pushed through one tape: encoder,
//! scores, closed-form payments, then a relaxed (temperature `tau`) argsort
//! whose top-K rows turn per-ad aggregated metrics into two listwise
//! losses. The target loss is the negated expected top-K metric mass; the
//! auxiliary cross-entropy pins each relaxed row to the hindsight-optimal
//! ranking. Adam updates all parameters; `tau` anneals per step.
//!
//! Payments feed the revenue term of the aggregated metrics, so gradients
//! flow through the inverse transform as well as the forward scores.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffError, Graph, NodeId, Tensor};
use crate::data::{AdCandidate, AuctionInstance, MetricId, ObjectiveSpec};
use crate::encoder::{encode_auction_graph, EncoderDims, EncoderNodes, Pooling};
use crate::evaluation::{compute_metrics, EvalError, EvalMode, Mechanism};
use crate::model::{AuctionModel, LearnedAuction, ModelError, NormStats};
use crate::rankscore::{
    clamp_payment_node, inverse_node, rank_score_node, scorer_batch, ScoreNode, ScorerBatch,
};
use crate::seeds;
use crate::sort::{hard_sort, soft_sort_node, HardPermutation, SortError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has no auctions with at least two candidates")]
    NoUsableAuctions,
    #[error("feature dimension varies across the dataset: {0} vs {1}")]
    InconsistentFeatures(usize, usize),
    #[error("feature dimension mismatch: model expects {expected}, dataset has {got}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("optimizer state length {got} does not match parameter count {expected}")]
    OptimizerShape { expected: usize, got: usize },
    #[error("invalid train config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("payments length {got} != candidate count {expected}")]
    PaymentLength { expected: usize, got: usize },
    #[error("top-k {k} exceeds row count {n}")]
    TopKTooLarge { k: usize, n: usize },
    #[error(
        "non-finite loss at epoch {epoch}, step {step}; offending batch pv_ids: {pv_ids:?}"
    )]
    NonFiniteLoss { epoch: usize, step: usize, pv_ids: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Sort(#[from] SortError),
    #[error(transparent)]
    Eval(#[from] Box<EvalError>),
}

// ---- temperature schedule -------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauKind {
    Exponential,
    Polynomial,
}

/// Non-increasing temperature schedule from `start` down to exactly `end`
/// at step `steps` (and beyond). `steps = 0` means "derive from the run
/// length" (epochs x batches per epoch) when training starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub kind: TauKind,
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl Default for TauSchedule {
    fn default() -> Self {
        TauSchedule { kind: TauKind::Exponential, start: 1.0, end: 0.1, steps: 0 }
    }
}

impl TauSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.end > 0.0 && self.start >= self.end && self.start.is_finite()) {
            return Err(TrainError::InvalidConfig {
                field: "tau",
                reason: format!("need start >= end > 0, got start {} end {}", self.start, self.end),
            });
        }
        Ok(())
    }

    /// Temperature for optimizer step `step` (0-based).
    pub fn value(&self, step: usize) -> f64 {
        if self.steps == 0 || step >= self.steps {
            return self.end;
        }
        let t = step as f64 / self.steps as f64;
        match self.kind {
            TauKind::Exponential => self.start * (self.end / self.start).powf(t),
            TauKind::Polynomial => self.end + (self.start - self.end) * (1.0 - t) * (1.0 - t),
        }
    }

    fn resolved(&self, total_steps: usize) -> TauSchedule {
        let mut s = *self;
        if s.steps == 0 {
            s.steps = total_steps;
        }
        s
    }
}

// ---- config ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveSpec,
    pub epochs: usize,
    /// Page views per minibatch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Mix between the target loss (`loss_mix`) and the cross-entropy term
    /// (`1 - loss_mix`).
    pub loss_mix: f64,
    /// L2 penalty folded into the gradient. Both losses are indifferent to
    /// per-auction score shifts and, once margins saturate, to scale; a
    /// small decay anchors those free directions instead of letting them
    /// random-walk under Adam.
    pub weight_decay: f64,
    pub tau: TauSchedule,
    pub seed: u64,
    /// Fraction of usable auctions held out for per-epoch evaluation.
    pub holdout_fraction: f64,
    /// Cap on holdout auctions scored per epoch (0 disables the eval).
    pub eval_sample: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub embedding: usize,
    pub groups: usize,
    pub pieces: usize,
    pub pooling: Pooling,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveSpec) -> Self {
        TrainConfig {
            objective,
            epochs: 3,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            loss_mix: 0.5,
            weight_decay: 0.0,
            tau: TauSchedule::default(),
            seed: 17,
            holdout_fraction: 0.1,
            eval_sample: 2000,
            hidden1: 128,
            hidden2: 32,
            embedding: 16,
            groups: 5,
            pieces: 20,
            pooling: Pooling::Mean,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &'static str, reason: String| Err(TrainError::InvalidConfig { field, reason });
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be finite and > 0, got {}", self.learning_rate));
        }
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(field, format!("must be in [0, 1), got {v}"));
            }
        }
        if self.epsilon <= 0.0 || self.epsilon.is_nan() {
            return bad("epsilon", "must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.loss_mix) {
            return bad("loss_mix", format!("must be in [0, 1], got {}", self.loss_mix));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", format!("must be finite and >= 0, got {}", self.weight_decay));
        }
        self.tau.validate()?;
        if !(0.0..=0.9).contains(&self.holdout_fraction) {
            return bad("holdout_fraction", format!("must be in [0, 0.9], got {}", self.holdout_fraction));
        }
        for (field, v) in [
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("embedding", self.embedding),
            ("groups", self.groups),
            ("pieces", self.pieces),
        ] {
            if v == 0 {
                return bad(field, "must be >= 1".into());
            }
        }
        Ok(())
    }

    pub fn encoder_dims(&self, feature_dim: usize) -> EncoderDims {
        EncoderDims {
            input: feature_dim,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            embedding: self.embedding,
        }
    }
}

// ---- metric aggregation and losses -----------------------------------------

/// Dense per-ad value of one metric: the slot-independent expectation the
/// realized feedback was drawn from, with revenue priced by the generated
/// payment.
pub fn raw_metric_term(metric: MetricId, cand: &AdCandidate, payment: f64) -> f64 {
    match metric {
        MetricId::Revenue => cand.pctr * payment,
        MetricId::Ctr => cand.pctr,
        MetricId::Cvr => cand.pctr * cand.pcvr,
        MetricId::Gpm => cand.pctr * cand.pcvr * cand.price,
    }
}

/// Per-ad aggregated objective vector: each metric normalized by `stats`,
/// then weighted and summed. `payments` are the per-candidate generated
/// payments (same indexing as `auction.candidates`).
pub fn aggregate_metrics(
    auction: &AuctionInstance,
    payments: &[f64],
    objective: &ObjectiveSpec,
    stats: &NormStats,
) -> Result<Vec<f64>, TrainError> {
    if payments.len() != auction.n() {
        return Err(TrainError::PaymentLength { expected: auction.n(), got: payments.len() });
    }
    Ok(auction
        .candidates
        .iter()
        .zip(payments)
        .map(|(cand, &p)| {
            objective
                .terms()
                .iter()
                .filter(|t| t.weight > 0.0)
                .map(|t| t.weight * stats.normalize(t.metric, raw_metric_term(t.metric, cand, p)))
                .sum()
        })
        .collect())
}

/// Negated expected top-`k` metric mass: `-sum_{rows < k} row . f_all`.
pub fn target_loss(matrix: &Tensor, f_all: &[f64], k: usize) -> Result<f64, TrainError> {
    if k > matrix.rows() {
        return Err(TrainError::TopKTooLarge { k, n: matrix.rows() });
    }
    if matrix.cols() != f_all.len() {
        return Err(TrainError::PaymentLength { expected: matrix.cols(), got: f_all.len() });
    }
    let mut total = 0.0;
    for row in 0..k {
        total += matrix.row_slice(row).iter().zip(f_all).map(|(&m, &f)| m * f).sum::<f64>();
    }
    Ok(-total)
}

/// Row-wise cross-entropy between a hard ground-truth permutation and a
/// row-stochastic matrix, with probabilities floored at 1e-12.
pub fn ce_loss(matrix: &Tensor, truth: &HardPermutation) -> Result<f64, TrainError> {
    let n = truth.len();
    if matrix.rows() != n || matrix.cols() != n {
        return Err(TrainError::PaymentLength { expected: n, got: matrix.rows() });
    }
    let mut total = 0.0;
    for (row, &item) in truth.order().iter().enumerate() {
        total += matrix.get(row, item).max(1e-12).ln();
    }
    Ok(-total / n as f64)
}

// ---- per-auction graph construction ----------------------------------------

/// Tape nodes and cached values from scoring one auction: per-ad scores and
/// the critical prices every ad would pay under the current ranking.
pub struct AuctionForward {
    pub scores: Vec<ScoreNode>,
    pub score_values: Vec<f64>,
    pub order: HardPermutation,
    /// Indexed by candidate.
    pub payment_nodes: Vec<NodeId>,
    pub payment_values: Vec<f64>,
}

/// Build encoder, scores, and payments for one auction on the tape.
pub fn auction_forward(
    g: &Graph,
    enc: &EncoderNodes,
    scorer: &ScorerBatch,
    pool: Pooling,
    auction: &AuctionInstance,
) -> Result<AuctionForward, TrainError> {
    let features: Vec<Vec<f64>> = auction.candidates.iter().map(|c| c.features.clone()).collect();
    let contexts = encode_auction_graph(g, enc, pool, &features)?;

    let mut scores = Vec::with_capacity(auction.n());
    for (cand, &ctx) in auction.candidates.iter().zip(&contexts) {
        let x = g.concat_rows(g.constant(Tensor::column(&cand.features)), ctx)?;
        scores.push(rank_score_node(g, scorer, cand.bid, x)?);
    }
    let score_values: Vec<f64> =
        scores.iter().map(|s| g.scalar_value(s.score)).collect::<Result<_, _>>()?;

    // Critical price for every ad in the current hard ranking; the ranking
    // itself is a value-level decision, but the next-score node stays on the
    // tape so gradients flow through the inverse transform.
    let order = hard_sort(&score_values);
    let mut payment_nodes = vec![None; auction.n()];
    for (rank, &idx) in order.order().iter().enumerate() {
        let next = match order.order().get(rank + 1) {
            Some(&j) => scores[j].score,
            None => g.scalar(0.0), // reserve score
        };
        let inv = inverse_node(g, scorer, scores[idx].linear, next)?;
        payment_nodes[idx] = Some(clamp_payment_node(g, inv, auction.candidates[idx].bid)?);
    }
    let payment_nodes: Vec<NodeId> = payment_nodes.into_iter().map(|p| p.expect("all ranked")).collect();
    let payment_values: Vec<f64> =
        payment_nodes.iter().map(|&p| g.scalar_value(p)).collect::<Result<_, _>>()?;

    Ok(AuctionForward { scores, score_values, order, payment_nodes, payment_values })
}

pub struct LossNodes {
    pub total: NodeId,
    pub target: NodeId,
    pub ce: NodeId,
}

/// Assemble both losses for a forwarded auction at temperature `tau`,
/// mixing them `mu : 1 - mu`. `stats` are read-only here; the training loop
/// updates them before calling this.
pub fn auction_losses(
    g: &Graph,
    fwd: &AuctionForward,
    auction: &AuctionInstance,
    objective: &ObjectiveSpec,
    stats: &NormStats,
    tau: f64,
    mu: f64,
) -> Result<LossNodes, TrainError> {
    let n = auction.n();

    // Aggregated per-ad objective, with the revenue term kept on the tape.
    let mut f_nodes = Vec::with_capacity(n);
    for (i, cand) in auction.candidates.iter().enumerate() {
        let mut constant_part = 0.0;
        let mut node: Option<NodeId> = None;
        for term in objective.terms() {
            if term.weight == 0.0 {
                continue;
            }
            if term.metric == MetricId::Revenue {
                let raw = g.scale(fwd.payment_nodes[i], cand.pctr)?;
                let centered = g.sub(raw, g.scalar(stats.mean(MetricId::Revenue)))?;
                let scaled = g.scale(centered, term.weight / stats.std(MetricId::Revenue))?;
                node = Some(match node {
                    Some(prev) => g.add(prev, scaled)?,
                    None => scaled,
                });
            } else {
                constant_part +=
                    term.weight * stats.normalize(term.metric, raw_metric_term(term.metric, cand, 0.0));
            }
        }
        let f_i = match node {
            Some(nd) if constant_part != 0.0 => g.add(nd, g.scalar(constant_part))?,
            Some(nd) => nd,
            None => g.scalar(constant_part),
        };
        f_nodes.push(f_i);
    }
    let f_vec = g.stack_scalars(&f_nodes)?;
    let f_values = g.value(f_vec);

    let r_vec = g.stack_scalars(&fwd.scores.iter().map(|s| s.score).collect::<Vec<_>>())?;
    let relaxed = soft_sort_node(g, r_vec, tau)?;

    let top_k = g.slice_rows(relaxed, 0, auction.k)?;
    let target = g.neg(g.sum(g.matmul(top_k, f_vec)?)?)?;

    // Hindsight-optimal ranking: descending sort of the aggregated metrics.
    let truth = hard_sort(f_values.data());
    let mask = g.constant(truth.to_matrix());
    let ce = g.scale(g.sum(g.mul(mask, g.log(relaxed)?)?)?, -1.0 / n as f64)?;

    let total = g.add(g.scale(target, mu)?, g.scale(ce, 1.0 - mu)?)?;
    Ok(LossNodes { total, target, ce })
}

// ---- optimizer ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] + cfg.weight_decay * params[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

// ---- training loop -----------------------------------------------------------

/// Resumable position of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub epochs_done: usize,
    pub tau_step: usize,
    pub adam: AdamState,
}

#[derive(Debug, Clone, Serialize)]
pub struct HoldoutStats {
    pub rpm: f64,
    pub ctr: f64,
    pub cvr: f64,
    pub gpm: f64,
    pub score_correlation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    /// 1-based absolute epoch number.
    pub epoch: usize,
    pub mean_target_loss: f64,
    pub mean_ce_loss: f64,
    pub first_batch_loss: f64,
    pub tau: f64,
    pub holdout: Option<HoldoutStats>,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub train_auctions: usize,
    pub holdout_auctions: usize,
    /// Instances skipped because they have fewer than two candidates.
    pub skipped_small_auctions: usize,
}

pub struct TrainOutcome {
    pub model: AuctionModel,
    pub progress: TrainProgress,
    pub report: TrainReport,
}

/// Deterministic train/holdout split of the usable (N >= 2) auctions.
/// Returns (train indices, holdout indices, skipped count).
fn split_dataset(
    data: &[AuctionInstance],
    cfg: &TrainConfig,
) -> Result<(Vec<usize>, Vec<usize>, usize), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut usable: Vec<usize> = (0..data.len()).filter(|&i| data[i].n() >= 2).collect();
    let skipped = data.len() - usable.len();
    if usable.is_empty() {
        return Err(TrainError::NoUsableAuctions);
    }
    let mut dim = None;
    for &i in &usable {
        let d = data[i].feature_dim();
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => return Err(TrainError::InconsistentFeatures(prev, d)),
            _ => {}
        }
    }
    usable.shuffle(&mut ChaCha12Rng::seed_from_u64(seeds::child(cfg.seed, "split")));
    let holdout_len = (usable.len() as f64 * cfg.holdout_fraction).floor() as usize;
    let split = usable.len() - holdout_len;
    let holdout = usable.split_off(split);
    Ok((usable, holdout, skipped))
}

/// Train a fresh model.
pub fn train(data: &[AuctionInstance], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_observer(data, cfg, &mut |_| {})
}

pub fn train_with_observer(
    data: &[AuctionInstance],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let (train_idx, _, _) = split_dataset(data, cfg)?;
    let feature_dim = data[train_idx[0]].feature_dim();
    let model = AuctionModel::init(
        feature_dim,
        cfg.encoder_dims(feature_dim),
        cfg.pooling,
        cfg.groups,
        cfg.pieces,
        cfg.objective.clone(),
        cfg.seed,
    );
    let progress =
        TrainProgress { epochs_done: 0, tau_step: 0, adam: AdamState::new(model.param_len()) };
    run_training(data, cfg, model, progress, observer)
}

/// Continue a run from a checkpointed model and progress. The schedule and
/// shuffles re-derive from the config seed and absolute epoch index, so a
/// split run reproduces an uninterrupted one exactly (pin `tau.steps`
/// explicitly; the auto value depends on the configured epoch count).
pub fn resume(
    data: &[AuctionInstance],
    cfg: &TrainConfig,
    model: AuctionModel,
    progress: TrainProgress,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if progress.adam.m.len() != model.param_len() {
        return Err(TrainError::OptimizerShape {
            expected: model.param_len(),
            got: progress.adam.m.len(),
        });
    }
    run_training(data, cfg, model, progress, observer)
}

fn run_training(
    data: &[AuctionInstance],
    cfg: &TrainConfig,
    mut model: AuctionModel,
    mut progress: TrainProgress,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    let (train_idx, holdout_idx, skipped) = split_dataset(data, cfg)?;
    let feature_dim = data[train_idx[0]].feature_dim();
    if model.feature_dim() != feature_dim {
        return Err(TrainError::FeatureDimMismatch { expected: model.feature_dim(), got: feature_dim });
    }

    let batches_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let tau_schedule = cfg.tau.resolved(cfg.epochs * batches_per_epoch);

    let g = Graph::new();
    let enc_nodes = model.encoder.param_nodes(&g);
    let scorer_nodes = model.scorer.param_nodes(&g);
    let mut param_ids: Vec<NodeId> = enc_nodes.ids().to_vec();
    param_ids.extend(scorer_nodes.ids());
    let mark = g.mark();

    let mut report = TrainReport {
        epochs: Vec::new(),
        train_auctions: train_idx.len(),
        holdout_auctions: holdout_idx.len(),
        skipped_small_auctions: skipped,
    };

    while progress.epochs_done < cfg.epochs {
        let epoch = progress.epochs_done;
        let mut order = train_idx.clone();
        order.shuffle(&mut ChaCha12Rng::seed_from_u64(seeds::child(
            cfg.seed,
            &format!("shuffle-{epoch}"),
        )));

        let epoch_tau = tau_schedule.value(progress.tau_step);
        let mut first_batch_loss = f64::NAN;
        let mut tgt_sum = 0.0;
        let mut ce_sum = 0.0;
        let mut batches = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let tau = tau_schedule.value(progress.tau_step);
            g.rewind(mark);
            let scorer = scorer_batch(&g, scorer_nodes)?;

            let mut totals = Vec::with_capacity(chunk.len());
            let mut batch_tgt = 0.0;
            let mut batch_ce = 0.0;
            for &di in chunk {
                let auction = &data[di];
                let fwd = auction_forward(&g, &enc_nodes, &scorer, cfg.pooling, auction)?;
                for term in cfg.objective.terms() {
                    if term.weight > 0.0 {
                        for (cand, &p) in auction.candidates.iter().zip(&fwd.payment_values) {
                            model.norm.update(term.metric, raw_metric_term(term.metric, cand, p));
                        }
                    }
                }
                let losses =
                    auction_losses(&g, &fwd, auction, &cfg.objective, &model.norm, tau, cfg.loss_mix)?;
                totals.push(losses.total);
                batch_tgt += g.scalar_value(losses.target)?;
                batch_ce += g.scalar_value(losses.ce)?;
            }

            let batch_loss =
                g.scale(g.sum(g.stack_scalars(&totals)?)?, 1.0 / chunk.len() as f64)?;
            let loss_value = g.scalar_value(batch_loss)?;
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: progress.tau_step,
                    pv_ids: chunk.iter().map(|&di| data[di].pv_id.clone()).collect(),
                });
            }
            g.backward(batch_loss)?;

            let mut flat_grads = Vec::with_capacity(model.param_len());
            for &pid in &param_ids {
                flat_grads.extend_from_slice(g.grad(pid).data());
            }
            let mut flat = model.flatten_params();
            progress.adam.step(&mut flat, &flat_grads, cfg);
            model.load_flat_params(&flat);
            for (&pid, tensor) in param_ids.iter().zip(model.param_tensors()) {
                g.set_leaf(pid, tensor.clone())?;
            }

            if batches == 0 {
                first_batch_loss = loss_value;
            }
            tgt_sum += batch_tgt / chunk.len() as f64;
            ce_sum += batch_ce / chunk.len() as f64;
            batches += 1;
            progress.tau_step += 1;
        }

        progress.epochs_done += 1;
        let holdout = holdout_eval(data, &holdout_idx, &model, cfg)?;
        let stats = EpochStats {
            epoch: progress.epochs_done,
            mean_target_loss: tgt_sum / batches as f64,
            mean_ce_loss: ce_sum / batches as f64,
            first_batch_loss,
            tau: epoch_tau,
            holdout,
        };
        observer(&stats);
        report.epochs.push(stats);
    }

    Ok(TrainOutcome { model, progress, report })
}

fn holdout_eval(
    data: &[AuctionInstance],
    holdout_idx: &[usize],
    model: &AuctionModel,
    cfg: &TrainConfig,
) -> Result<Option<HoldoutStats>, TrainError> {
    if cfg.eval_sample == 0 || holdout_idx.is_empty() {
        return Ok(None);
    }
    let sample: Vec<&AuctionInstance> =
        holdout_idx.iter().take(cfg.eval_sample).map(|&i| &data[i]).collect();
    let mechanism = LearnedAuction::new(model.clone());
    let mut outcomes = Vec::with_capacity(sample.len());
    for auction in &sample {
        outcomes.push(mechanism.run(auction).map_err(Box::new)?);
    }
    let metrics = compute_metrics(
        sample.iter().copied().zip(outcomes.iter()),
        EvalMode::Expected,
    )
    .map_err(Box::new)?;

    let mut pairs = Vec::new();
    for auction in &sample {
        let scored = model.score_auction(auction)?;
        let f_all = aggregate_metrics(auction, &scored.payments, &model.objective, &model.norm)?;
        pairs.extend(scored.scores.iter().copied().zip(f_all));
    }
    Ok(Some(HoldoutStats {
        rpm: metrics.rpm,
        ctr: metrics.ctr,
        cvr: metrics.cvr,
        gpm: metrics.gpm,
        score_correlation: crate::evaluation::pearson(&pairs),
    }))
}

//! Auction outcomes, the mechanism abstraction, and evaluation tooling:
//! platform metrics, bid-perturbation incentive regret, score/objective
//! correlation, and multi-objective sweeps.

mod ic;
mod metrics;
mod sweep;

pub use ic::{ic_regret, IcReport, PerturbationGrid, RegretCase};
pub use metrics::{
    compute_metrics, pearson, score_objective_correlation, CorrelationReport, EvalMode,
    MetricsReport,
};
pub use sweep::{
    matched_rpm_comparisons, pareto_frontier, pareto_sweep, value_at_rpm, MatchedRpmComparison,
    MechanismKind, SweepConfig, SweepPoint, SweepTable,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AuctionInstance, DataError};
use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no impressions in the evaluation stream")]
    NoImpressions,
    #[error("outcome does not match auction: {0}")]
    Mismatch(String),
    #[error("invalid mechanism config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] Box<TrainError>),
}

/// One filled slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub ad_index: usize,
    pub ad_id: String,
    /// 1-based slot; slot 1 has the highest exposure.
    pub slot: usize,
    pub payment: f64,
}

/// Allocation and payments for one auction. `winners.len()` is
/// `min(K, candidates present)`; each slot appears at most once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub pv_id: String,
    pub winners: Vec<Winner>,
    pub slot_ctrs: Vec<f64>,
}

impl AuctionOutcome {
    /// Slot of a candidate (1-based), or `None` if it lost.
    pub fn slot_of(&self, ad_index: usize) -> Option<usize> {
        self.winners.iter().find(|w| w.ad_index == ad_index).map(|w| w.slot)
    }

    pub fn payment_of(&self, ad_index: usize) -> Option<f64> {
        self.winners.iter().find(|w| w.ad_index == ad_index).map(|w| w.payment)
    }

    /// Exposure weight of a slot, 0 for "lost".
    pub fn exposure(&self, slot: Option<usize>) -> f64 {
        match slot {
            Some(s) if s >= 1 && s <= self.slot_ctrs.len() => self.slot_ctrs[s - 1],
            _ => 0.0,
        }
    }
}

/// Per-auction scoring rule behind a mechanism: how one candidate is
/// scored at an arbitrary bid, and what a winner pays given the
/// next-highest retained score.
pub trait ScoreRule {
    fn score(&self, idx: usize, bid: f64) -> f64;
    fn payment(&self, idx: usize, bid: f64, next_score: f64) -> f64;
}

/// An auction bound to a mechanism, cheap to re-run under single-bid
/// perturbations (only the perturbed ad is rescored).
pub struct Prepared<'a> {
    auction: &'a AuctionInstance,
    rule: Box<dyn ScoreRule + 'a>,
    base_scores: Vec<f64>,
    base: AuctionOutcome,
}

impl<'a> Prepared<'a> {
    pub fn new(auction: &'a AuctionInstance, rule: Box<dyn ScoreRule + 'a>) -> Self {
        let base_scores: Vec<f64> = auction
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| rule.score(i, c.bid))
            .collect();
        let mut prepared = Prepared {
            auction,
            rule,
            base_scores,
            base: AuctionOutcome {
                pv_id: auction.pv_id.clone(),
                winners: Vec::new(),
                slot_ctrs: auction.slot_ctrs.clone(),
            },
        };
        prepared.base = prepared.run_case(None, None);
        prepared
    }

    pub fn auction(&self) -> &AuctionInstance {
        self.auction
    }

    pub fn scores(&self) -> &[f64] {
        &self.base_scores
    }

    pub fn baseline(&self) -> &AuctionOutcome {
        &self.base
    }

    /// Re-run with ad `ad` bidding `bid`, everything else fixed.
    pub fn with_bid(&self, ad: usize, bid: f64) -> AuctionOutcome {
        self.run_case(None, Some((ad, bid)))
    }

    /// Re-run with ad `ad` absent (a zero bid multiplier drops out).
    pub fn without(&self, ad: usize) -> AuctionOutcome {
        self.run_case(Some(ad), None)
    }

    fn run_case(&self, exclude: Option<usize>, override_bid: Option<(usize, f64)>) -> AuctionOutcome {
        let auction = self.auction;
        let mut scores = self.base_scores.clone();
        if let Some((ad, bid)) = override_bid {
            scores[ad] = self.rule.score(ad, bid);
        }
        let mut ranked: Vec<usize> =
            (0..auction.n()).filter(|&i| exclude != Some(i)).collect();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

        let winner_count = auction.k.min(ranked.len());
        let mut winners = Vec::with_capacity(winner_count);
        for pos in 0..winner_count {
            let idx = ranked[pos];
            // Reserve score 0 when no ad follows.
            let next = ranked.get(pos + 1).map(|&j| scores[j]).unwrap_or(0.0);
            let bid = match override_bid {
                Some((ad, b)) if ad == idx => b,
                _ => auction.candidates[idx].bid,
            };
            winners.push(Winner {
                ad_index: idx,
                ad_id: auction.candidates[idx].ad_id.clone(),
                slot: pos + 1,
                payment: self.rule.payment(idx, bid, next),
            });
        }
        AuctionOutcome { pv_id: auction.pv_id.clone(), winners, slot_ctrs: auction.slot_ctrs.clone() }
    }
}

/// An auction mechanism: deterministic allocation plus payments, re-runnable
/// under bid perturbations with everything else held fixed.
pub trait Mechanism {
    fn name(&self) -> String;

    fn prepare<'a>(&'a self, auction: &'a AuctionInstance) -> Result<Prepared<'a>, EvalError>;

    fn run(&self, auction: &AuctionInstance) -> Result<AuctionOutcome, EvalError> {
        Ok(self.prepare(auction)?.baseline().clone())
    }
}

//! Platform performance metrics and score/objective correlation.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AuctionOutcome, EvalError};
use crate::data::{AuctionInstance, MetricId};
use crate::model::AuctionModel;
use crate::training::aggregate_metrics;

/// `Realized` replays the stored feedback; `Expected` weights the dense
/// probabilities by the slot exposure curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Realized,
    Expected,
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "realized" => Ok(EvalMode::Realized),
            "expected" => Ok(EvalMode::Expected),
            other => Err(format!("unknown eval mode `{other}` (expected realized|expected)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Revenue per thousand impressions.
    pub rpm: f64,
    pub ctr: f64,
    pub cvr: f64,
    /// Merchandise volume per thousand impressions.
    pub gpm: f64,
    pub impressions: u64,
    pub clicks: f64,
    pub orders: f64,
}

impl MetricsReport {
    pub fn get(&self, metric: MetricId) -> f64 {
        match metric {
            MetricId::Revenue => self.rpm,
            MetricId::Ctr => self.ctr,
            MetricId::Cvr => self.cvr,
            MetricId::Gpm => self.gpm,
        }
    }
}

/// Aggregate platform metrics over (auction, outcome) pairs.
///
/// Every displayed ad counts one impression. Realized mode: clicks and
/// orders replay the logged feedback and revenue is `click * payment`.
/// Expected mode: a winner in slot `k` clicks with probability
/// `slot_ctr[k] * pctr` and converts with `slot_ctr[k] * pctr * pcvr`.
pub fn compute_metrics<'a, I>(pairs: I, mode: EvalMode) -> Result<MetricsReport, EvalError>
where
    I: IntoIterator<Item = (&'a AuctionInstance, &'a AuctionOutcome)>,
{
    let mut impressions = 0u64;
    let mut clicks = 0.0;
    let mut orders = 0.0;
    let mut revenue = 0.0;
    let mut volume = 0.0;

    for (auction, outcome) in pairs {
        if auction.pv_id != outcome.pv_id {
            return Err(EvalError::Mismatch(format!(
                "auction {} paired with outcome {}",
                auction.pv_id, outcome.pv_id
            )));
        }
        for winner in &outcome.winners {
            let cand = auction.candidates.get(winner.ad_index).ok_or_else(|| {
                EvalError::Mismatch(format!(
                    "outcome {} references candidate {}",
                    outcome.pv_id, winner.ad_index
                ))
            })?;
            impressions += 1;
            match mode {
                EvalMode::Realized => {
                    let click = if cand.click { 1.0 } else { 0.0 };
                    let order = if cand.conversion { 1.0 } else { 0.0 };
                    clicks += click;
                    orders += order;
                    revenue += click * winner.payment;
                    volume += order * cand.price;
                }
                EvalMode::Expected => {
                    let beta = outcome.exposure(Some(winner.slot));
                    let click = beta * cand.pctr;
                    let order = click * cand.pcvr;
                    clicks += click;
                    orders += order;
                    revenue += click * winner.payment;
                    volume += order * cand.price;
                }
            }
        }
    }

    if impressions == 0 {
        return Err(EvalError::NoImpressions);
    }
    let denom = impressions as f64;
    Ok(MetricsReport {
        rpm: revenue / denom * 1000.0,
        ctr: clicks / denom,
        cvr: orders / denom,
        gpm: volume / denom * 1000.0,
        impressions,
        clicks,
        orders,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    /// Pearson correlation; `None` when either side is constant.
    pub rho: Option<f64>,
    pub pairs: Vec<(f64, f64)>,
}

/// Per-ad (rank score, combined objective) pairs and their Pearson
/// correlation, pooled over all candidates of all auctions. The objective
/// side is the model's own aggregated metric vector (frozen normalization,
/// payments generated by the current ranking).
pub fn score_objective_correlation(
    model: &AuctionModel,
    auctions: &[AuctionInstance],
) -> Result<CorrelationReport, EvalError> {
    let mut pairs = Vec::new();
    for auction in auctions {
        let scored = model.score_auction(auction)?;
        let f_all = aggregate_metrics(auction, &scored.payments, &model.objective, &model.norm)
            .map_err(Box::new)?;
        for (i, &score) in scored.scores.iter().enumerate() {
            pairs.push((score, f_all[i]));
        }
    }
    Ok(CorrelationReport { rho: pearson(&pairs), pairs })
}

/// Pearson correlation; `None` for fewer than two pairs or a constant side.
pub fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for &(x, y) in pairs {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

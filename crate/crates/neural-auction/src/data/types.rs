//! Auction domain types and their invariants.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid field `{field}`: {reason}")]
    InvalidField { line: usize, field: &'static str, reason: String },
    #[error("missing or invalid header: {0}")]
    Header(String),
    #[error("unsupported dataset version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("invalid generator config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("invalid objective: {0}")]
    InvalidObjective(String),
}

/// Field-level invariant violation, wrapped with a line number at I/O
/// boundaries.
pub(crate) struct FieldViolation {
    pub field: &'static str,
    pub reason: String,
}

fn violation(field: &'static str, reason: impl Into<String>) -> Result<(), FieldViolation> {
    Err(FieldViolation { field, reason: reason.into() })
}

/// One advertiser's entry in an auction.
///
/// `features` excludes the bid by construction; the bid only ever reaches
/// the mechanism through the `bid` field. `click`/`conversion` are the
/// realized (synthetic) feedback, while `pctr`/`pcvr` are the dense
/// probabilities the feedback was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdCandidate {
    pub ad_id: String,
    /// Money per click, strictly positive.
    pub bid: f64,
    pub pctr: f64,
    pub pcvr: f64,
    /// Product price, used for merchandise-volume metrics.
    pub price: f64,
    pub features: Vec<f64>,
    pub click: bool,
    pub conversion: bool,
}

impl AdCandidate {
    pub(crate) fn check(&self) -> Result<(), FieldViolation> {
        if !(self.bid.is_finite() && self.bid > 0.0) {
            return violation("bid", format!("must be finite and > 0, got {}", self.bid));
        }
        if !(0.0..=1.0).contains(&self.pctr) {
            return violation("pctr", format!("must be in [0, 1], got {}", self.pctr));
        }
        if !(0.0..=1.0).contains(&self.pcvr) {
            return violation("pcvr", format!("must be in [0, 1], got {}", self.pcvr));
        }
        if !(self.price.is_finite() && self.price >= 0.0) {
            return violation("price", format!("must be finite and >= 0, got {}", self.price));
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return violation("features", "must be finite");
        }
        if self.conversion && !self.click {
            return violation("conversion", "conversion requires a click");
        }
        Ok(())
    }
}

/// One page-view request: `N` candidates competing for `k <= N` slots with
/// a non-increasing slot click-through curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionInstance {
    pub pv_id: String,
    pub k: usize,
    /// Slot exposure curve `slot_ctrs[0] >= ... > 0`, entries in (0, 1].
    pub slot_ctrs: Vec<f64>,
    pub candidates: Vec<AdCandidate>,
}

impl AuctionInstance {
    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    /// Number of slots actually filled.
    pub fn winner_count(&self) -> usize {
        self.k.min(self.n())
    }

    pub(crate) fn check(&self) -> Result<(), FieldViolation> {
        if self.candidates.is_empty() {
            return violation("candidates", "auction needs at least one candidate");
        }
        if self.k == 0 {
            return violation("k", "slot count must be >= 1");
        }
        if self.k > self.candidates.len() {
            return violation(
                "k",
                format!("slot count {} exceeds candidate count {}", self.k, self.candidates.len()),
            );
        }
        if self.slot_ctrs.len() != self.k {
            return violation(
                "slot_ctrs",
                format!("expected {} entries, got {}", self.k, self.slot_ctrs.len()),
            );
        }
        let mut prev = 1.0f64;
        for &beta in &self.slot_ctrs {
            if !(beta.is_finite() && beta > 0.0 && beta <= 1.0) {
                return violation("slot_ctrs", format!("entries must be in (0, 1], got {beta}"));
            }
            if beta > prev {
                return violation("slot_ctrs", "entries must be non-increasing");
            }
            prev = beta;
        }
        let dim = self.candidates[0].features.len();
        for cand in &self.candidates {
            cand.check()?;
            if cand.features.len() != dim {
                return violation("features", "feature length must be uniform within an auction");
            }
        }
        Ok(())
    }

    /// Validate all invariants, reporting a line number on failure.
    pub fn validate(&self, line: usize) -> Result<(), DataError> {
        self.check().map_err(|v| DataError::InvalidField {
            line,
            field: v.field,
            reason: v.reason,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.candidates[0].features.len()
    }
}

/// A platform performance metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricId {
    Revenue,
    Ctr,
    Cvr,
    Gpm,
}

impl MetricId {
    pub const ALL: [MetricId; 4] = [MetricId::Revenue, MetricId::Ctr, MetricId::Cvr, MetricId::Gpm];

    pub fn index(self) -> usize {
        match self {
            MetricId::Revenue => 0,
            MetricId::Ctr => 1,
            MetricId::Cvr => 2,
            MetricId::Gpm => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Revenue => "revenue",
            MetricId::Ctr => "ctr",
            MetricId::Cvr => "cvr",
            MetricId::Gpm => "gpm",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "revenue" => Ok(MetricId::Revenue),
            "ctr" => Ok(MetricId::Ctr),
            "cvr" => Ok(MetricId::Cvr),
            "gpm" => Ok(MetricId::Gpm),
            other => Err(DataError::InvalidObjective(format!("unknown metric id `{other}`"))),
        }
    }
}

/// Weighted combination of performance metrics to maximize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MetricWeight>", into = "Vec<MetricWeight>")]
pub struct ObjectiveSpec {
    terms: Vec<MetricWeight>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWeight {
    pub metric: MetricId,
    pub weight: f64,
}

impl TryFrom<Vec<MetricWeight>> for ObjectiveSpec {
    type Error = DataError;

    fn try_from(terms: Vec<MetricWeight>) -> Result<Self, DataError> {
        ObjectiveSpec::new(terms)
    }
}

impl From<ObjectiveSpec> for Vec<MetricWeight> {
    fn from(o: ObjectiveSpec) -> Self {
        o.terms
    }
}

impl ObjectiveSpec {
    /// All weights must be finite and non-negative, at least one positive,
    /// and no metric may repeat.
    pub fn new(terms: Vec<MetricWeight>) -> Result<Self, DataError> {
        if terms.iter().any(|t| !t.weight.is_finite() || t.weight < 0.0) {
            return Err(DataError::InvalidObjective("weights must be finite and >= 0".into()));
        }
        if !terms.iter().any(|t| t.weight > 0.0) {
            return Err(DataError::InvalidObjective("at least one weight must be > 0".into()));
        }
        let mut seen = [false; 4];
        for t in &terms {
            let i = t.metric.index();
            if seen[i] {
                return Err(DataError::InvalidObjective(format!(
                    "metric `{}` listed twice",
                    t.metric
                )));
            }
            seen[i] = true;
        }
        Ok(ObjectiveSpec { terms })
    }

    pub fn from_pairs(pairs: &[(MetricId, f64)]) -> Result<Self, DataError> {
        Self::new(pairs.iter().map(|&(metric, weight)| MetricWeight { metric, weight }).collect())
    }

    pub fn single(metric: MetricId) -> Self {
        Self::from_pairs(&[(metric, 1.0)]).expect("unit weight is valid")
    }

    /// `lambda * revenue + (1 - lambda) * other`. `lambda` must be in [0, 1]
    /// and the pair must not degenerate to all zeros.
    pub fn revenue_mix(lambda: f64, other: MetricId) -> Result<Self, DataError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(DataError::InvalidObjective(format!("lambda must be in [0, 1], got {lambda}")));
        }
        Self::from_pairs(&[(MetricId::Revenue, lambda), (other, 1.0 - lambda)])
    }

    pub fn terms(&self) -> &[MetricWeight] {
        &self.terms
    }

    pub fn weight(&self, metric: MetricId) -> f64 {
        self.terms
            .iter()
            .find(|t| t.metric == metric)
            .map(|t| t.weight)
            .unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate() -> AdCandidate {
        AdCandidate {
            ad_id: "ad-1".into(),
            bid: 1.5,
            pctr: 0.2,
            pcvr: 0.05,
            price: 30.0,
            features: vec![0.2, 0.05, 0.5],
            click: true,
            conversion: false,
        }
    }

    #[test]
    fn conversion_without_click_is_rejected() {
        let mut c = candidate();
        c.conversion = true;
        c.click = false;
        let v = c.check().unwrap_err();
        assert_eq!(v.field, "conversion");
    }

    #[test]
    fn nonpositive_bid_names_the_field() {
        let mut c = candidate();
        c.bid = 0.0;
        assert_eq!(c.check().unwrap_err().field, "bid");
    }

    #[test]
    fn slot_curve_must_not_increase() {
        let instance = AuctionInstance {
            pv_id: "pv-1".into(),
            k: 2,
            slot_ctrs: vec![0.5, 0.7],
            candidates: vec![candidate(), candidate()],
        };
        assert_eq!(instance.check().unwrap_err().field, "slot_ctrs");
    }

    #[test]
    fn objective_rejects_all_zero_weights() {
        assert!(ObjectiveSpec::from_pairs(&[(MetricId::Ctr, 0.0)]).is_err());
        assert!(ObjectiveSpec::from_pairs(&[(MetricId::Ctr, 1.0), (MetricId::Ctr, 0.5)]).is_err());
        assert!(ObjectiveSpec::from_pairs(&[(MetricId::Ctr, 1.0)]).is_ok());
    }
}

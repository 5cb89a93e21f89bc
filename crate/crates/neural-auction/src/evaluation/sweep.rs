//! Multi-objective sweeps: trade one metric against revenue across a
//! preference grid, per mechanism, and compare the resulting curves.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{compute_metrics, EvalError, EvalMode, Mechanism};
use crate::baselines::{GspAuction, UgfpAuction, UgspAuction, UgspWeights};
use crate::data::{AuctionInstance, MetricId, ObjectiveSpec};
use crate::model::LearnedAuction;
use crate::training::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Learned,
    Gsp,
    Ugsp,
    Ugfp,
}

impl FromStr for MechanismKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "learned" => Ok(MechanismKind::Learned),
            "gsp" => Ok(MechanismKind::Gsp),
            "ugsp" => Ok(MechanismKind::Ugsp),
            "ugfp" => Ok(MechanismKind::Ugfp),
            other => Err(format!("unknown mechanism `{other}` (expected learned|gsp|ugsp|ugfp)")),
        }
    }
}

/// One point of a sweep curve: mechanism, its tuning parameter (preference
/// weight, or squashing exponent for GSP), and the two evaluated metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mechanism: String,
    pub parameter: f64,
    pub rpm: f64,
    pub metric: MetricId,
    pub metric_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub metric: MetricId,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn points_of<'a>(&'a self, mechanism: &str) -> Vec<&'a SweepPoint> {
        self.points.iter().filter(|p| p.mechanism == mechanism).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub metric: MetricId,
    pub lambdas: Vec<f64>,
    pub gsp_sigmas: Vec<f64>,
    pub mechanisms: Vec<MechanismKind>,
    pub mode: EvalMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            metric: MetricId::Ctr,
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            gsp_sigmas: vec![0.5, 0.875, 1.25, 1.625, 2.0],
            mechanisms: vec![
                MechanismKind::Learned,
                MechanismKind::Gsp,
                MechanismKind::Ugsp,
                MechanismKind::Ugfp,
            ],
            mode: EvalMode::Expected,
        }
    }
}

fn eval_point(
    mechanism: &dyn Mechanism,
    parameter: f64,
    holdout: &[AuctionInstance],
    metric: MetricId,
    mode: EvalMode,
) -> Result<SweepPoint, EvalError> {
    let outcomes: Vec<_> =
        holdout.iter().map(|a| mechanism.run(a)).collect::<Result<_, _>>()?;
    let report = compute_metrics(holdout.iter().zip(outcomes.iter()), mode)?;
    Ok(SweepPoint {
        mechanism: mechanism.name(),
        parameter,
        rpm: report.rpm,
        metric,
        metric_value: report.get(metric),
    })
}

/// Sweep every requested mechanism across its parameter grid. Baselines are
/// analytic; the learned mechanism is trained from scratch per preference
/// weight on `train_data` (objective `lambda * revenue + (1 - lambda) *
/// metric`) and evaluated, like everything else, on `holdout`.
pub fn pareto_sweep(
    train_data: &[AuctionInstance],
    holdout: &[AuctionInstance],
    cfg: &SweepConfig,
    train_cfg: &TrainConfig,
) -> Result<SweepTable, EvalError> {
    let mut points = Vec::new();
    for kind in &cfg.mechanisms {
        match kind {
            MechanismKind::Gsp => {
                for &sigma in &cfg.gsp_sigmas {
                    let mech = GspAuction::new(sigma).map_err(EvalError::Config)?;
                    points.push(eval_point(&mech, sigma, holdout, cfg.metric, cfg.mode)?);
                }
            }
            MechanismKind::Ugsp => {
                for &lambda in &cfg.lambdas {
                    let mech = UgspAuction::new(UgspWeights::sweep_mix(lambda, cfg.metric))
                        .map_err(EvalError::Config)?;
                    points.push(eval_point(&mech, lambda, holdout, cfg.metric, cfg.mode)?);
                }
            }
            MechanismKind::Ugfp => {
                for &lambda in &cfg.lambdas {
                    let mech = UgfpAuction::new(UgspWeights::sweep_mix(lambda, cfg.metric))
                        .map_err(EvalError::Config)?;
                    points.push(eval_point(&mech, lambda, holdout, cfg.metric, cfg.mode)?);
                }
            }
            MechanismKind::Learned => {
                for &lambda in &cfg.lambdas {
                    let objective = ObjectiveSpec::revenue_mix(lambda, cfg.metric)?;
                    let mut per_lambda = train_cfg.clone();
                    per_lambda.objective = objective;
                    let outcome = train(train_data, &per_lambda).map_err(Box::new)?;
                    let mech = LearnedAuction::new(outcome.model);
                    points.push(eval_point(&mech, lambda, holdout, cfg.metric, cfg.mode)?);
                }
            }
        }
    }
    Ok(SweepTable { metric: cfg.metric, points })
}

/// Pareto frontier of (rpm, metric) points: sorted by rpm ascending, values
/// strictly decreasing (higher-rpm points never have a better value).
pub fn pareto_frontier(points: &[SweepPoint]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p.rpm, p.metric_value)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0)); // rpm descending
    let mut frontier = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for (rpm, value) in sorted {
        if value > best {
            frontier.push((rpm, value));
            best = value;
        }
    }
    frontier.reverse(); // rpm ascending
    frontier
}

/// Metric value the frontier achieves at a target rpm: linear interpolation
/// on the frontier, flat extension below its rpm range, `None` above it.
pub fn value_at_rpm(frontier: &[(f64, f64)], rpm: f64) -> Option<f64> {
    if frontier.is_empty() {
        return None;
    }
    let (min_rpm, min_val) = frontier[0];
    let (max_rpm, _) = *frontier.last().unwrap();
    if rpm > max_rpm {
        return None;
    }
    if rpm <= min_rpm {
        return Some(min_val);
    }
    let mut prev = frontier[0];
    for &(r, v) in &frontier[1..] {
        if rpm <= r {
            let t = (rpm - prev.0) / (r - prev.0);
            return Some(prev.1 + t * (v - prev.1));
        }
        prev = (r, v);
    }
    Some(frontier.last().unwrap().1)
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchedRpmComparison {
    pub parameter: f64,
    pub rpm: f64,
    pub baseline_value: f64,
    /// What the curve delivers at the same rpm (`None`: rpm out of reach).
    pub curve_value: Option<f64>,
    pub curve_wins: bool,
}

/// Compare a curve against baseline points at matched revenue levels: for
/// each baseline point, interpolate the curve's frontier at the baseline's
/// rpm and check the curve's metric is at least as good.
pub fn matched_rpm_comparisons(
    curve: &[SweepPoint],
    baseline: &[SweepPoint],
) -> Vec<MatchedRpmComparison> {
    let frontier = pareto_frontier(curve);
    baseline
        .iter()
        .map(|b| {
            let curve_value = value_at_rpm(&frontier, b.rpm);
            MatchedRpmComparison {
                parameter: b.parameter,
                rpm: b.rpm,
                baseline_value: b.metric_value,
                curve_value,
                curve_wins: curve_value.map(|v| v >= b.metric_value).unwrap_or(false),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(rpm: f64, value: f64) -> SweepPoint {
        SweepPoint { mechanism: "x".into(), parameter: 0.0, rpm, metric: MetricId::Ctr, metric_value: value }
    }

    #[test]
    fn frontier_drops_dominated_points() {
        let pts = vec![point(1.0, 0.9), point(2.0, 0.7), point(1.5, 0.6), point(3.0, 0.2)];
        let frontier = pareto_frontier(&pts);
        assert_eq!(frontier, vec![(1.0, 0.9), (2.0, 0.7), (3.0, 0.2)]);
    }

    #[test]
    fn interpolation_and_extension() {
        let frontier = vec![(1.0, 0.9), (2.0, 0.7), (3.0, 0.2)];
        assert_eq!(value_at_rpm(&frontier, 0.5), Some(0.9)); // flat below range
        assert!((value_at_rpm(&frontier, 1.5).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(value_at_rpm(&frontier, 3.0), Some(0.2));
        assert_eq!(value_at_rpm(&frontier, 3.1), None); // unreachable rpm
    }

    #[test]
    fn matched_comparison_marks_wins() {
        let curve = vec![point(1.0, 0.9), point(3.0, 0.5)];
        let baseline = vec![point(2.0, 0.6), point(2.0, 0.8), point(4.0, 0.1)];
        let cmp = matched_rpm_comparisons(&curve, &baseline);
        assert!(cmp[0].curve_wins); // curve gives 0.7 at rpm 2
        assert!(!cmp[1].curve_wins); // 0.7 < 0.8
        assert!(!cmp[2].curve_wins); // rpm 4 out of reach
    }
}

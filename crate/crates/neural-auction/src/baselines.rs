//! Classical mechanisms: quality-weighted second price with a squashing
//! exponent, the utility-weighted second-price variant, and its first-price
//! counterpart.

use serde::{Deserialize, Serialize};

use crate::data::{AuctionInstance, MetricId};
use crate::evaluation::{EvalError, Mechanism, Prepared, ScoreRule};

/// Second-price auction ranked by `bid * pctr^sigma`. A winner pays the
/// minimum bid retaining the slot: `next_score / pctr^sigma`; the last
/// retained ad pays the reserve 0. Zero-quality ads (pctr = 0 with
/// sigma > 0) rank last and pay 0 rather than divide by zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GspAuction {
    sigma: f64,
}

impl GspAuction {
    pub fn new(sigma: f64) -> Result<Self, String> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(format!("squashing exponent must be finite and >= 0, got {sigma}"));
        }
        Ok(GspAuction { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

struct GspRule {
    qualities: Vec<f64>,
}

impl ScoreRule for GspRule {
    fn score(&self, idx: usize, bid: f64) -> f64 {
        bid * self.qualities[idx]
    }

    fn payment(&self, idx: usize, bid: f64, next_score: f64) -> f64 {
        let q = self.qualities[idx];
        if q == 0.0 {
            return 0.0;
        }
        // Analytically in [0, bid] already; the clamp only absorbs float
        // rounding at exact score ties.
        (next_score / q).clamp(0.0, bid)
    }
}

impl Mechanism for GspAuction {
    fn name(&self) -> String {
        format!("gsp(sigma={})", self.sigma)
    }

    fn prepare<'a>(&'a self, auction: &'a AuctionInstance) -> Result<Prepared<'a>, EvalError> {
        let qualities = auction.candidates.iter().map(|c| c.pctr.powf(self.sigma)).collect();
        Ok(Prepared::new(auction, Box::new(GspRule { qualities })))
    }
}

/// Utility weights for the rank score
/// `bid_weight * b * pctr + ctr * pctr + cvr * pcvr + gpm * pcvr * price`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UgspWeights {
    pub bid: f64,
    pub ctr: f64,
    pub cvr: f64,
    pub gpm: f64,
}

impl UgspWeights {
    /// Minimum bid weight substituted for 0 in sweeps; the payment formula
    /// divides by the bid weight, so it must stay positive.
    pub const MIN_BID_WEIGHT: f64 = 1e-6;

    pub fn ecpm() -> Self {
        UgspWeights { bid: 1.0, ctr: 0.0, cvr: 0.0, gpm: 0.0 }
    }

    /// `lambda` on the revenue term, `1 - lambda` on the utility estimate of
    /// `metric`; a zero lambda is floored at [`Self::MIN_BID_WEIGHT`].
    pub fn sweep_mix(lambda: f64, metric: MetricId) -> Self {
        let mut w = UgspWeights { bid: lambda.max(Self::MIN_BID_WEIGHT), ctr: 0.0, cvr: 0.0, gpm: 0.0 };
        let rest = 1.0 - lambda;
        match metric {
            MetricId::Ctr | MetricId::Revenue => w.ctr = rest,
            MetricId::Cvr => w.cvr = rest,
            MetricId::Gpm => w.gpm = rest,
        }
        w
    }

    fn validate(&self) -> Result<(), String> {
        for (name, v) in [("bid", self.bid), ("ctr", self.ctr), ("cvr", self.cvr), ("gpm", self.gpm)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("weight `{name}` must be finite and >= 0, got {v}"));
            }
        }
        if self.bid == 0.0 {
            return Err("bid weight must be > 0 (the payment formula divides by it)".into());
        }
        Ok(())
    }

    fn other_utility(&self, auction: &AuctionInstance, idx: usize) -> f64 {
        let c = &auction.candidates[idx];
        self.ctr * c.pctr + self.cvr * c.pcvr + self.gpm * c.pcvr * c.price
    }
}

/// Utility-weighted second price: ranked by `bid_w * b * pctr + o`, a winner
/// pays `(next_score - o) / (bid_w * pctr)`, clamped into `[0, bid]` (the
/// raw formula can go negative when the winner's own utility term dominates
/// the follower's score).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UgspAuction {
    weights: UgspWeights,
}

impl UgspAuction {
    pub fn new(weights: UgspWeights) -> Result<Self, String> {
        weights.validate()?;
        Ok(UgspAuction { weights })
    }

    pub fn weights(&self) -> UgspWeights {
        self.weights
    }
}

struct UgspRule<'a> {
    auction: &'a AuctionInstance,
    weights: UgspWeights,
    first_price: bool,
}

impl ScoreRule for UgspRule<'_> {
    fn score(&self, idx: usize, bid: f64) -> f64 {
        self.weights.bid * bid * self.auction.candidates[idx].pctr
            + self.weights.other_utility(self.auction, idx)
    }

    fn payment(&self, idx: usize, bid: f64, next_score: f64) -> f64 {
        if self.first_price {
            return bid;
        }
        let denom = self.weights.bid * self.auction.candidates[idx].pctr;
        if denom == 0.0 {
            return 0.0;
        }
        let o = self.weights.other_utility(self.auction, idx);
        ((next_score - o) / denom).clamp(0.0, bid)
    }
}

impl Mechanism for UgspAuction {
    fn name(&self) -> String {
        "ugsp".into()
    }

    fn prepare<'a>(&'a self, auction: &'a AuctionInstance) -> Result<Prepared<'a>, EvalError> {
        Ok(Prepared::new(
            auction,
            Box::new(UgspRule { auction, weights: self.weights, first_price: false }),
        ))
    }
}

/// Same allocation as [`UgspAuction`]; a winner simply pays her bid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UgfpAuction {
    weights: UgspWeights,
}

impl UgfpAuction {
    pub fn new(weights: UgspWeights) -> Result<Self, String> {
        weights.validate()?;
        Ok(UgfpAuction { weights })
    }
}

impl Mechanism for UgfpAuction {
    fn name(&self) -> String {
        "ugfp".into()
    }

    fn prepare<'a>(&'a self, auction: &'a AuctionInstance) -> Result<Prepared<'a>, EvalError> {
        Ok(Prepared::new(
            auction,
            Box::new(UgspRule { auction, weights: self.weights, first_price: true }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, AdCandidate, GeneratorConfig};

    fn candidate(id: &str, bid: f64, pctr: f64) -> AdCandidate {
        AdCandidate {
            ad_id: id.into(),
            bid,
            pctr,
            pcvr: 0.1,
            price: 20.0,
            features: vec![0.0],
            click: false,
            conversion: false,
        }
    }

    fn auction(cands: Vec<AdCandidate>, k: usize) -> AuctionInstance {
        let slot_ctrs = (0..k).map(|j| 0.9f64.powi(j as i32)).collect();
        AuctionInstance { pv_id: "pv-t".into(), k, slot_ctrs, candidates: cands }
    }

    #[test]
    fn gsp_hand_example() {
        // bids [2, 1], pctr [0.1, 0.3], sigma 1: scores [0.2, 0.3], so ad 2
        // takes slot 1 and pays 0.2 / 0.3.
        let a = auction(vec![candidate("a", 2.0, 0.1), candidate("b", 1.0, 0.3)], 2);
        let gsp = GspAuction::new(1.0).unwrap();
        let out = gsp.run(&a).unwrap();
        assert_eq!(out.winners[0].ad_index, 1);
        assert!((out.winners[0].payment - 0.2 / 0.3).abs() < 1e-12);
        // Slot 2 goes to ad 1, which prices against the reserve 0.
        assert_eq!(out.winners[1].ad_index, 0);
        assert_eq!(out.winners[1].payment, 0.0);
    }

    #[test]
    fn gsp_sigma_zero_collapses_to_bid_ranking() {
        let a = auction(
            vec![candidate("a", 2.0, 0.1), candidate("b", 3.0, 0.01), candidate("c", 1.0, 0.9)],
            2,
        );
        let gsp = GspAuction::new(0.0).unwrap();
        let out = gsp.run(&a).unwrap();
        assert_eq!(out.winners[0].ad_index, 1);
        assert!((out.winners[0].payment - 2.0).abs() < 1e-12, "pays the next bid");
        assert_eq!(out.winners[1].ad_index, 0);
        assert!((out.winners[1].payment - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gsp_single_ad_pays_reserve() {
        let a = auction(vec![candidate("a", 2.0, 0.4)], 1);
        let out = GspAuction::new(1.0).unwrap().run(&a).unwrap();
        assert_eq!(out.winners[0].payment, 0.0);
    }

    #[test]
    fn gsp_zero_pctr_ranks_last_and_pays_nothing() {
        let a = auction(vec![candidate("a", 9.0, 0.0), candidate("b", 0.5, 0.2)], 2);
        let out = GspAuction::new(1.0).unwrap().run(&a).unwrap();
        assert_eq!(out.winners[0].ad_index, 1);
        assert_eq!(out.winners[1].ad_index, 0);
        assert_eq!(out.winners[1].payment, 0.0);
        // The ad above a zero-quality follower pays 0 as well.
        assert_eq!(out.winners[0].payment, 0.0);
    }

    #[test]
    fn ugsp_with_zero_utilities_matches_gsp_sigma_one() {
        let cfg = GeneratorConfig::default();
        let gsp = GspAuction::new(1.0).unwrap();
        let ugsp = UgspAuction::new(UgspWeights::ecpm()).unwrap();
        for a in generate_dataset(&cfg, 200).unwrap() {
            let x = gsp.run(&a).unwrap();
            let y = ugsp.run(&a).unwrap();
            assert_eq!(
                x.winners.iter().map(|w| w.ad_index).collect::<Vec<_>>(),
                y.winners.iter().map(|w| w.ad_index).collect::<Vec<_>>()
            );
            for (wx, wy) in x.winners.iter().zip(&y.winners) {
                assert!((wx.payment - wy.payment).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ugsp_two_ad_hand_payment() {
        // lambda = (1, 1, 0): score = b * pctr + pctr.
        let a = auction(vec![candidate("a", 2.0, 0.5), candidate("b", 1.0, 0.4)], 1);
        let w = UgspWeights { bid: 1.0, ctr: 1.0, cvr: 0.0, gpm: 0.0 };
        let out = UgspAuction::new(w).unwrap().run(&a).unwrap();
        // Scores: 1.5 vs 0.8; winner a pays (0.8 - 0.5) / (1 * 0.5) = 0.6.
        assert_eq!(out.winners[0].ad_index, 0);
        assert!((out.winners[0].payment - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ugsp_negative_payment_clamps_to_zero() {
        // Winner's own utility term exceeds the follower's whole score.
        let a = auction(vec![candidate("a", 0.5, 0.9), candidate("b", 0.1, 0.05)], 1);
        let w = UgspWeights { bid: 0.2, ctr: 1.0, cvr: 0.0, gpm: 0.0 };
        let out = UgspAuction::new(w).unwrap().run(&a).unwrap();
        assert_eq!(out.winners[0].payment, 0.0);
    }

    #[test]
    fn ugsp_rejects_zero_bid_weight() {
        let w = UgspWeights { bid: 0.0, ctr: 1.0, cvr: 0.0, gpm: 0.0 };
        assert!(UgspAuction::new(w).is_err());
    }

    #[test]
    fn ugfp_pays_the_bid() {
        let cfg = GeneratorConfig::default();
        let ugfp = UgfpAuction::new(UgspWeights::sweep_mix(0.7, MetricId::Ctr)).unwrap();
        for a in generate_dataset(&cfg, 100).unwrap() {
            let out = ugfp.run(&a).unwrap();
            for w in &out.winners {
                assert_eq!(w.payment, a.candidates[w.ad_index].bid);
            }
        }
    }

    #[test]
    fn ugfp_single_ad_pays_own_bid() {
        let a = auction(vec![candidate("a", 1.7, 0.3)], 1);
        let out = UgfpAuction::new(UgspWeights::ecpm()).unwrap().run(&a).unwrap();
        assert!((out.winners[0].payment - 1.7).abs() < 1e-15);
    }

    #[test]
    fn ugfp_winner_can_underbid_and_keep_the_slot() {
        // Perturbation oracle: shading the top bid down to just above the
        // critical score keeps the slot at a strictly lower payment.
        let a = auction(vec![candidate("a", 2.0, 0.5), candidate("b", 1.0, 0.4)], 1);
        let ugfp = UgfpAuction::new(UgspWeights::ecpm()).unwrap();
        let prepared = ugfp.prepare(&a).unwrap();
        let base = prepared.baseline();
        assert_eq!(base.winners[0].ad_index, 0);
        let base_pay = base.winners[0].payment;

        let mut found_cheaper_same_slot = false;
        for step in 1..200 {
            let bid = 2.0 * (1.0 - step as f64 / 200.0);
            let out = prepared.with_bid(0, bid);
            if out.slot_of(0) == Some(1) && out.payment_of(0).unwrap() < base_pay {
                found_cheaper_same_slot = true;
                break;
            }
        }
        assert!(found_cheaper_same_slot);
    }

    #[test]
    fn second_price_payments_are_individually_rational() {
        // 0 <= payment <= bid across a large random sample.
        let cfg = GeneratorConfig { seed: 99, ..GeneratorConfig::default() };
        let gsp = GspAuction::new(1.3).unwrap();
        let ugsp = UgspAuction::new(UgspWeights::sweep_mix(0.4, MetricId::Ctr)).unwrap();
        for a in generate_dataset(&cfg, 10_000).unwrap() {
            for mech in [&gsp as &dyn Mechanism, &ugsp as &dyn Mechanism] {
                let out = mech.run(&a).unwrap();
                for w in &out.winners {
                    let bid = a.candidates[w.ad_index].bid;
                    assert!(
                        w.payment >= 0.0 && w.payment <= bid,
                        "{}: payment {} outside [0, {bid}]",
                        mech.name(),
                        w.payment
                    );
                }
            }
        }
    }

    #[test]
    fn gsp_payment_is_the_critical_price_on_a_grid() {
        // Bidding payment + eps keeps the slot; payment - eps loses it.
        let cfg = GeneratorConfig { seed: 5, ..GeneratorConfig::default() };
        let gsp = GspAuction::new(1.0).unwrap();
        let eps = 1e-4;
        for a in generate_dataset(&cfg, 200).unwrap() {
            let prepared = gsp.prepare(&a).unwrap();
            let base = prepared.baseline().clone();
            for w in &base.winners {
                let out_hi = prepared.with_bid(w.ad_index, w.payment + eps);
                assert_eq!(out_hi.slot_of(w.ad_index), Some(w.slot), "{}", a.pv_id);
                if w.payment > eps {
                    let out_lo = prepared.with_bid(w.ad_index, w.payment - eps);
                    assert_ne!(out_lo.slot_of(w.ad_index), Some(w.slot), "{}", a.pv_id);
                }
            }
        }
    }
}

//! Winner determination and payment rules.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::profile::ProfileBatch;
use super::setting::{Allocation, SettingKind, SettingSpec};
use crate::core_pricing::{self, CoreReference, CoreSolveOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentRule {
    FirstPrice,
    SecondPrice,
    Vcg,
    NearestVcg,
    NearestBid,
    NearestZero,
}

impl PaymentRule {
    pub const ALL: [PaymentRule; 6] = [
        PaymentRule::FirstPrice,
        PaymentRule::SecondPrice,
        PaymentRule::Vcg,
        PaymentRule::NearestVcg,
        PaymentRule::NearestBid,
        PaymentRule::NearestZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PaymentRule::FirstPrice => "first_price",
            PaymentRule::SecondPrice => "second_price",
            PaymentRule::Vcg => "vcg",
            PaymentRule::NearestVcg => "nearest_vcg",
            PaymentRule::NearestBid => "nearest_bid",
            PaymentRule::NearestZero => "nearest_zero",
        }
    }

    /// Reference point of a core-selecting rule.
    pub fn core_reference(self) -> Option<CoreReference> {
        match self {
            PaymentRule::NearestVcg => Some(CoreReference::Vcg),
            PaymentRule::NearestBid => Some(CoreReference::Bids),
            PaymentRule::NearestZero => Some(CoreReference::Zero),
            _ => None,
        }
    }
}

impl fmt::Display for PaymentRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Welfare-maximizing feasible allocation for a flat bid profile.
///
/// Among positive-welfare ties the allocation with more winners wins, so a
/// zero bid on a bundle still wins it when the rest of the allocation is
/// unchanged. Remaining ties go to the first allocation in enumeration order,
/// and an all-zero profile yields the empty allocation.
#[inline]
pub fn winner_determination(spec: &SettingSpec, bids: &[f64]) -> usize {
    let mut best = 0;
    let mut best_welfare = 0.0;
    let mut best_count = 0;
    for a in 1..spec.feasible_allocations().len() {
        let w = spec.welfare(a, bids);
        if w > best_welfare {
            best = a;
            best_welfare = w;
            best_count = spec.allocation_winners(a).count_ones();
        } else if w == best_welfare && w > 0.0 {
            let count = spec.allocation_winners(a).count_ones();
            if count > best_count {
                best = a;
                best_count = count;
            }
        }
    }
    best
}

pub fn pay_first_price(spec: &SettingSpec, bids: &[f64], allocation: usize, payments: &mut [f64]) {
    payments.fill(0.0);
    for i in 0..spec.n_bidders() {
        if let Some(slot) = spec.won_slot(allocation, i) {
            payments[i] = bids[slot];
        }
    }
}

/// Vickrey payments. Only defined for single-item settings.
pub fn pay_second_price(
    spec: &SettingSpec,
    bids: &[f64],
    allocation: usize,
    payments: &mut [f64],
) -> Result<()> {
    if spec.n_items() != 1 || spec.n_slots() != spec.n_bidders() {
        return Err(Error::RuleUnsupported {
            rule: PaymentRule::SecondPrice.name(),
            reason: "second-price payments need a single-item setting".into(),
        });
    }
    payments.fill(0.0);
    if let Some(winner) = (0..spec.n_bidders()).find(|&i| spec.won_slot(allocation, i).is_some()) {
        payments[winner] = bids
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != winner)
            .map(|(_, &b)| b)
            .fold(0.0, f64::max);
    }
    Ok(())
}

/// Optimal reported welfare over allocations that give nothing to `excluded`.
fn welfare_without(spec: &SettingSpec, bids: &[f64], excluded: usize) -> f64 {
    let bit = 1u32 << excluded;
    (0..spec.feasible_allocations().len())
        .filter(|&a| spec.allocation_winners(a) & bit == 0)
        .map(|a| spec.welfare(a, bids))
        .fold(0.0, f64::max)
}

/// VCG payments `p_i = W(−i) − (W − b_i(x_i))` for the given (welfare-maximal)
/// allocation.
pub fn pay_vcg(spec: &SettingSpec, bids: &[f64], allocation: usize, payments: &mut [f64]) {
    payments.fill(0.0);
    let total = spec.welfare(allocation, bids);
    for i in 0..spec.n_bidders() {
        if let Some(slot) = spec.won_slot(allocation, i) {
            let own = bids[slot];
            let p = welfare_without(spec, bids, i) - (total - own);
            // rounding can push p a few ulps outside [0, own]
            payments[i] = p.clamp(0.0, own);
        }
    }
}

/// Utility model: risk neutral for `risk_rho = 1`, otherwise CRRA-style
/// `sign(z)·|z|^ρ` on the realized payoff `z = v_i(x_i) − p_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityModel {
    pub risk_rho: f64,
}

impl Default for UtilityModel {
    fn default() -> Self {
        Self::RISK_NEUTRAL
    }
}

impl UtilityModel {
    pub const RISK_NEUTRAL: UtilityModel = UtilityModel { risk_rho: 1.0 };

    pub fn new(risk_rho: f64) -> Result<Self> {
        if !(risk_rho > 0.0 && risk_rho <= 1.0) {
            return Err(Error::InvalidConfig(vec![format!(
                "risk_rho = {risk_rho} must lie in (0, 1]"
            )]));
        }
        Ok(Self { risk_rho })
    }

    #[inline]
    pub fn apply(&self, payoff: f64) -> f64 {
        if self.risk_rho == 1.0 {
            payoff
        } else {
            payoff.signum() * payoff.abs().powf(self.risk_rho)
        }
    }
}

/// Allocation plus per-bidder payments (zeros for losers).
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    pub allocation_index: usize,
    pub allocation: Allocation,
    pub payments: Vec<f64>,
}

/// Ex-post utility of every bidder for one valuation profile.
pub fn ex_post_utility(
    spec: &SettingSpec,
    values: &[f64],
    outcome: &AuctionOutcome,
    model: UtilityModel,
) -> Vec<f64> {
    (0..spec.n_bidders())
        .map(|i| bidder_utility(spec, values, outcome.allocation_index, &outcome.payments, i, model))
        .collect()
}

#[inline]
pub fn bidder_utility(
    spec: &SettingSpec,
    values: &[f64],
    allocation: usize,
    payments: &[f64],
    bidder: usize,
    model: UtilityModel,
) -> f64 {
    let value = spec.won_slot(allocation, bidder).map_or(0.0, |s| values[s]);
    model.apply(value - payments[bidder])
}

/// Outcomes of a batch: allocation index per sample and a row-major
/// `[sample × bidder]` payment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub allocations: Vec<usize>,
    pub payments: ProfileBatch,
}

/// A setting paired with a payment rule.
#[derive(Debug, Clone)]
pub struct Auction {
    spec: SettingSpec,
    rule: PaymentRule,
    core: CoreSolveOptions,
}

impl Auction {
    pub fn new(spec: SettingSpec, rule: PaymentRule) -> Result<Self> {
        if rule == PaymentRule::SecondPrice && (spec.n_items() != 1 || spec.n_slots() != spec.n_bidders()) {
            return Err(Error::RuleUnsupported {
                rule: rule.name(),
                reason: "second-price payments need a single-item setting".into(),
            });
        }
        Ok(Self {
            spec,
            rule,
            core: CoreSolveOptions::default(),
        })
    }

    /// Overrides how core-selecting payments are computed (e.g. force the QP
    /// path in LLG to cross-check the closed form).
    pub fn with_core_options(mut self, core: CoreSolveOptions) -> Self {
        self.core = core;
        self
    }

    pub fn spec(&self) -> &SettingSpec {
        &self.spec
    }

    pub fn rule(&self) -> PaymentRule {
        self.rule
    }

    /// Computes one outcome, writing payments (one per bidder) into
    /// `payments`. Returns the allocation index.
    pub fn outcome_into(&self, bids: &[f64], payments: &mut [f64]) -> Result<usize> {
        let spec = &self.spec;
        let allocation = winner_determination(spec, bids);
        match self.rule {
            PaymentRule::FirstPrice => pay_first_price(spec, bids, allocation, payments),
            PaymentRule::SecondPrice => pay_second_price(spec, bids, allocation, payments)?,
            PaymentRule::Vcg => pay_vcg(spec, bids, allocation, payments),
            rule => {
                let reference = rule.core_reference().expect("core rule");
                if spec.kind() == SettingKind::Llg && !self.core.force_qp {
                    let p = core_pricing::llg_core_closed_form([bids[0], bids[1], bids[2]], reference);
                    payments[..3].copy_from_slice(&p);
                } else {
                    core_pricing::core_payments_into(spec, bids, allocation, reference, &self.core, payments)?;
                }
            }
        }
        Ok(allocation)
    }

    pub fn outcome(&self, bids: &[f64]) -> Result<AuctionOutcome> {
        self.spec.check_profile(bids)?;
        if bids.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Shape("bids must be finite and nonnegative".into()));
        }
        let mut payments = vec![0.0; self.spec.n_bidders()];
        let allocation_index = self.outcome_into(bids, &mut payments)?;
        Ok(AuctionOutcome {
            allocation_index,
            allocation: self.spec.allocation(allocation_index).clone(),
            payments,
        })
    }

    /// Element-wise [`outcome`](Self::outcome) over a batch, evaluated in
    /// parallel. Errors carry the index of the failing sample.
    pub fn run_batch(&self, bids: &ProfileBatch) -> Result<BatchOutcome> {
        if bids.width() != self.spec.n_slots() {
            return Err(Error::Shape(format!(
                "bid rows have width {}, setting expects {}",
                bids.width(),
                self.spec.n_slots()
            )));
        }
        let n = self.spec.n_bidders();
        let mut payments = ProfileBatch::zeros(bids.len(), n);
        let mut allocations = vec![0; bids.len()];
        payments
            .as_mut_slice()
            .par_chunks_mut(n)
            .zip(allocations.par_iter_mut())
            .zip(bids.as_slice().par_chunks(bids.width()))
            .enumerate()
            .try_for_each(|(h, ((pay, alloc), b))| {
                *alloc = self.outcome_into(b, pay).map_err(|e| e.at_sample(h))?;
                Ok::<_, Error>(())
            })?;
        Ok(BatchOutcome { allocations, payments })
    }
}

/// Free-function form of [`Auction::run_batch`].
pub fn run_auction_batch(spec: &SettingSpec, rule: PaymentRule, bids: &ProfileBatch) -> Result<BatchOutcome> {
    Auction::new(spec.clone(), rule)?.run_batch(bids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn outcome(spec: &SettingSpec, rule: PaymentRule, bids: &[f64]) -> AuctionOutcome {
        Auction::new(spec.clone(), rule).unwrap().outcome(bids).unwrap()
    }

    #[test]
    fn llg_winner_determination() {
        let spec = SettingSpec::llg();
        let a = winner_determination(&spec, &[0.6, 0.7, 1.0]);
        assert_eq!(spec.allocation(a), &vec![Some(0), Some(0), None]);
        let a = winner_determination(&spec, &[0.2, 0.3, 1.0]);
        assert_eq!(spec.allocation(a), &vec![None, None, Some(0)]);
        assert_eq!(winner_determination(&spec, &[0.0, 0.0, 0.0]), 0);
        // a zero-bidding local still takes its item next to a winning partner
        let a = winner_determination(&spec, &[0.0, 0.7, 0.5]);
        assert_eq!(spec.allocation(a), &vec![Some(0), Some(0), None]);
        let a = winner_determination(&spec, &[0.0, 0.5, 0.5]);
        assert_eq!(spec.allocation(a), &vec![Some(0), Some(0), None]);
    }

    #[test]
    fn first_price_payments() {
        let single = SettingSpec::single_item(2).unwrap();
        assert_eq!(outcome(&single, PaymentRule::FirstPrice, &[5.0, 3.0]).payments, vec![5.0, 0.0]);
        let llg = SettingSpec::llg();
        assert_eq!(
            outcome(&llg, PaymentRule::FirstPrice, &[0.6, 0.7, 1.0]).payments,
            vec![0.6, 0.7, 0.0]
        );
        assert_eq!(outcome(&llg, PaymentRule::FirstPrice, &[0.0; 3]).payments, vec![0.0; 3]);
    }

    #[test]
    fn second_price_payments() {
        let spec = SettingSpec::single_item(2).unwrap();
        assert_eq!(outcome(&spec, PaymentRule::SecondPrice, &[5.0, 3.0]).payments, vec![3.0, 0.0]);
        let tie = outcome(&spec, PaymentRule::SecondPrice, &[5.0, 5.0]);
        // (None, Some) enumerates before (Some, None): bidder 1 wins the tie
        assert_eq!(tie.allocation, vec![None, Some(0)]);
        assert_eq!(tie.payments, vec![0.0, 5.0]);
        let lone = SettingSpec::single_item(1).unwrap();
        assert_eq!(outcome(&lone, PaymentRule::SecondPrice, &[4.0]).payments, vec![0.0]);
        assert!(Auction::new(SettingSpec::llg(), PaymentRule::SecondPrice).is_err());
    }

    #[test]
    fn vcg_payments() {
        let llg = SettingSpec::llg();
        let p = outcome(&llg, PaymentRule::Vcg, &[0.6, 0.7, 1.0]).payments;
        assert_abs_diff_eq!(p[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.4, epsilon = 1e-12);
        assert_eq!(p[2], 0.0);
        let single = SettingSpec::single_item(2).unwrap();
        assert_eq!(outcome(&single, PaymentRule::Vcg, &[5.0, 3.0]).payments, vec![3.0, 0.0]);
        let lone = SettingSpec::single_item(1).unwrap();
        assert_eq!(outcome(&lone, PaymentRule::Vcg, &[4.0]).payments, vec![0.0]);
    }

    #[test]
    fn utilities() {
        let spec = SettingSpec::single_item(2).unwrap();
        let out = outcome(&spec, PaymentRule::FirstPrice, &[5.0, 3.0]);
        assert_eq!(ex_post_utility(&spec, &[8.0, 4.0], &out, UtilityModel::RISK_NEUTRAL), vec![3.0, 0.0]);
        let averse = UtilityModel::new(0.5).unwrap();
        assert_abs_diff_eq!(ex_post_utility(&spec, &[9.0, 4.0], &out, averse)[0], 2.0, epsilon = 1e-12);
        // overbidding: negative payoff stays negative and monotone
        assert_abs_diff_eq!(averse.apply(-4.0), -2.0, epsilon = 1e-12);
        assert!(UtilityModel::new(0.0).is_err());
        assert!(UtilityModel::new(1.5).is_err());
    }

    #[test]
    fn batch_matches_single_samples() {
        let spec = SettingSpec::llg();
        let rows = vec![[0.6, 0.7, 1.0], [0.2, 0.3, 1.0], [0.9, 0.1, 0.5], [0.0, 0.0, 0.0]];
        let batch = ProfileBatch::from_rows(&rows).unwrap();
        for rule in [PaymentRule::FirstPrice, PaymentRule::Vcg, PaymentRule::NearestZero] {
            let auction = Auction::new(spec.clone(), rule).unwrap();
            let out = auction.run_batch(&batch).unwrap();
            for (h, r) in rows.iter().enumerate() {
                let single = auction.outcome(r).unwrap();
                assert_eq!(out.allocations[h], single.allocation_index);
                assert_eq!(out.payments.row(h), single.payments.as_slice());
            }
        }
    }

    #[test]
    fn batch_of_identical_profiles() {
        let spec = SettingSpec::single_item(3).unwrap();
        let batch = ProfileBatch::from_rows(&vec![[1.0, 2.0, 0.5]; 16]).unwrap();
        let out = run_auction_batch(&spec, PaymentRule::SecondPrice, &batch).unwrap();
        assert!(out.payments.rows().all(|r| r == [0.0, 1.0, 0.0]));
    }
}

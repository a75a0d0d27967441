//! A Bayesian auction game: mechanism, prior and utility model, with
//! Monte-Carlo utility estimates over valuation batches.

use rayon::prelude::*;

use crate::auction::{bidder_utility, Auction, BidBatch, SettingSpec, UtilityModel, ValuationBatch};
use crate::error::{Error, Result};
use crate::policy::StrategyParams;
use crate::priors::PriorSpec;

/// Rows per parallel task in batch-wide sums. Fixed so that summation order,
/// and therefore every result bit, does not depend on the worker count.
pub const CHUNK_ROWS: usize = 512;

/// Anything that maps one bidder's valuations to bids.
pub trait Strategy: Sync {
    fn bid_into(&self, values: &[f64], bids: &mut [f64]);

    /// Bids for many valuations at once, `dim` entries per row.
    fn bid_rows(&self, values: &[f64], bids: &mut [f64], dim: usize) {
        for (v, b) in values.chunks_exact(dim).zip(bids.chunks_exact_mut(dim)) {
            self.bid_into(v, b);
        }
    }
}

impl Strategy for StrategyParams {
    fn bid_into(&self, values: &[f64], bids: &mut [f64]) {
        self.arch.forward_one(&self.theta, values, bids);
    }

    fn bid_rows(&self, values: &[f64], bids: &mut [f64], _: usize) {
        self.arch.forward_unchecked(&self.theta, values, bids);
    }
}

/// The truthful strategy `β(v) = v`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Truthful;

impl Strategy for Truthful {
    fn bid_into(&self, values: &[f64], bids: &mut [f64]) {
        bids.copy_from_slice(values);
    }
}

/// A network given by architecture and a borrowed parameter vector, used for
/// perturbed parameters without copying the architecture.
pub struct NetView<'a> {
    pub arch: &'a crate::policy::Architecture,
    pub theta: &'a [f64],
}

impl Strategy for NetView<'_> {
    fn bid_into(&self, values: &[f64], bids: &mut [f64]) {
        self.arch.forward_one(self.theta, values, bids);
    }

    fn bid_rows(&self, values: &[f64], bids: &mut [f64], _: usize) {
        self.arch.forward_unchecked(self.theta, values, bids);
    }
}

/// Bids of `bidder` for every row of a flat valuation slice.
fn own_bids(spec: &SettingSpec, bidder: usize, own: &dyn Strategy, values: &[f64]) -> Vec<f64> {
    let width = spec.n_slots();
    let range = spec.slot_range(bidder);
    let k = range.len();
    let own_values: Vec<f64> = values.chunks_exact(width).flat_map(|r| r[range.clone()].iter().copied()).collect();
    let mut out = vec![0.0; own_values.len()];
    own.bid_rows(&own_values, &mut out, k);
    debug_assert_eq!(out.len(), k * (values.len() / width));
    out
}

#[derive(Debug, Clone)]
pub struct Game {
    pub auction: Auction,
    pub prior: PriorSpec,
    pub model: UtilityModel,
}

impl Game {
    pub fn new(auction: Auction, prior: PriorSpec, model: UtilityModel) -> Result<Self> {
        prior.validate(auction.spec())?;
        Ok(Self { auction, prior, model })
    }

    pub fn spec(&self) -> &SettingSpec {
        self.auction.spec()
    }

    pub fn n_bidders(&self) -> usize {
        self.spec().n_bidders()
    }

    /// Bid profiles for a valuation batch with every bidder playing its
    /// strategy.
    pub fn bids(&self, strategies: &[&dyn Strategy], values: &ValuationBatch) -> Result<BidBatch> {
        let spec = self.spec();
        if strategies.len() != spec.n_bidders() {
            return Err(Error::Shape(format!(
                "{} strategies for {} bidders",
                strategies.len(),
                spec.n_bidders()
            )));
        }
        let width = spec.n_slots();
        let mut bids = BidBatch::zeros(values.len(), width);
        bids.as_mut_slice()
            .par_chunks_mut(width * CHUNK_ROWS)
            .zip(values.as_slice().par_chunks(width * CHUNK_ROWS))
            .for_each(|(b, v)| {
                for (i, s) in strategies.iter().enumerate() {
                    let r = spec.slot_range(i);
                    let own = own_bids(spec, i, *s, v);
                    for (brow, x) in b.chunks_exact_mut(width).zip(own.chunks_exact(r.len())) {
                        brow[r.clone()].copy_from_slice(x);
                    }
                }
            });
        if bids.as_slice().iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("bids"));
        }
        Ok(bids)
    }

    /// Sum over `rows` of `bidder`'s utility when it plays `own` and everyone
    /// else bids as recorded in `bids`. Sequential.
    pub fn utility_sum_rows(
        &self,
        bidder: usize,
        own: &dyn Strategy,
        values: &[f64],
        bids: &[f64],
    ) -> Result<f64> {
        let spec = self.spec();
        let width = spec.n_slots();
        let range = spec.slot_range(bidder);
        let mut row = vec![0.0; width];
        let mut pay = vec![0.0; spec.n_bidders()];
        let mut total = 0.0;
        let own_b = own_bids(spec, bidder, own, values);
        if own_b.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("bids"));
        }
        for ((vrow, brow), x) in values.chunks_exact(width).zip(bids.chunks_exact(width)).zip(own_b.chunks_exact(range.len())) {
            row.copy_from_slice(brow);
            row[range.clone()].copy_from_slice(x);
            let a = self.auction.outcome_into(&row, &mut pay)?;
            total += bidder_utility(spec, vrow, a, &pay, bidder, self.model);
        }
        Ok(total)
    }

    /// Mean utility of `bidder` playing `own` against the recorded bids.
    /// Sequential; intended for callers that already parallelize (ES
    /// perturbations).
    pub fn utility_against(&self, bidder: usize, own: &dyn Strategy, values: &ValuationBatch, bids: &BidBatch) -> Result<f64> {
        Ok(self.utility_sum_rows(bidder, own, values.as_slice(), bids.as_slice())? / values.len() as f64)
    }

    /// Same value as [`utility_against`](Self::utility_against), parallel over
    /// fixed row chunks.
    pub fn utility_against_par(&self, bidder: usize, own: &dyn Strategy, values: &ValuationBatch, bids: &BidBatch) -> Result<f64> {
        let width = self.spec().n_slots();
        let parts: Vec<f64> = values
            .as_slice()
            .par_chunks(width * CHUNK_ROWS)
            .zip(bids.as_slice().par_chunks(width * CHUNK_ROWS))
            .map(|(v, b)| self.utility_sum_rows(bidder, own, v, b))
            .collect::<Result<_>>()?;
        Ok(parts.iter().sum::<f64>() / values.len() as f64)
    }

    /// Mean utility of every bidder under the given bid profiles.
    pub fn mean_utilities(&self, values: &ValuationBatch, bids: &BidBatch) -> Result<Vec<f64>> {
        let spec = self.spec();
        let n = spec.n_bidders();
        let width = spec.n_slots();
        let parts: Vec<Vec<f64>> = values
            .as_slice()
            .par_chunks(width * CHUNK_ROWS)
            .zip(bids.as_slice().par_chunks(width * CHUNK_ROWS))
            .map(|(v, b)| {
                let mut pay = vec![0.0; n];
                let mut sums = vec![0.0; n];
                for (vrow, brow) in v.chunks_exact(width).zip(b.chunks_exact(width)) {
                    let a = self.auction.outcome_into(brow, &mut pay)?;
                    for (i, s) in sums.iter_mut().enumerate() {
                        *s += bidder_utility(spec, vrow, a, &pay, i, self.model);
                    }
                }
                Ok(sums)
            })
            .collect::<Result<_>>()?;
        let mut total = vec![0.0; n];
        for p in parts {
            for (t, x) in total.iter_mut().zip(p) {
                *t += x;
            }
        }
        Ok(total.into_iter().map(|t| t / values.len() as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::PaymentRule;
    use crate::priors::sample_valuations;
    use crate::rng::RngState;

    #[test]
    fn truthful_second_price_utility() {
        // E[(v1 − v2)⁺] = 1/6 for two U[0,1] bidders
        let spec = SettingSpec::single_item(2).unwrap();
        let game = Game::new(Auction::new(spec.clone(), PaymentRule::SecondPrice).unwrap(), PriorSpec::uniform(0.0, 1.0), UtilityModel::RISK_NEUTRAL).unwrap();
        let v = sample_valuations(&game.prior, &spec, 200_000, &RngState::new(1)).unwrap();
        let b = game.bids(&[&Truthful, &Truthful], &v).unwrap();
        let u = game.mean_utilities(&v, &b).unwrap();
        for x in u {
            assert!((x - 1.0 / 6.0).abs() < 3e-3, "{x}");
        }
        let par = game.utility_against_par(0, &Truthful, &v, &b).unwrap();
        let seq = game.utility_against(0, &Truthful, &v, &b).unwrap();
        assert!((par - seq).abs() < 1e-12);
    }

    #[test]
    fn all_zero_first_price_gives_nothing() {
        struct Zero;
        impl Strategy for Zero {
            fn bid_into(&self, _: &[f64], b: &mut [f64]) {
                b.fill(0.0);
            }
        }
        let spec = SettingSpec::single_item(2).unwrap();
        let game = Game::new(Auction::new(spec.clone(), PaymentRule::FirstPrice).unwrap(), PriorSpec::uniform(0.0, 1.0), UtilityModel::RISK_NEUTRAL).unwrap();
        let v = sample_valuations(&game.prior, &spec, 1000, &RngState::new(2)).unwrap();
        let b = game.bids(&[&Zero, &Zero], &v).unwrap();
        assert_eq!(game.mean_utilities(&v, &b).unwrap(), vec![0.0, 0.0]);
    }
}

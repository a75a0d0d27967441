//! Numerical payoff-monotonicity check: for sampled action pairs (a, b) of one
//! bidder, is ⟨∇ū(a) − ∇ū(b), a − b⟩ < 0?

use rayon::prelude::*;

use crate::auction::BidBatch;
use crate::error::{Error, Result};
use crate::game::{Game, Strategy};
use crate::priors::sample_valuations;
use crate::rng::RngState;

use super::metrics::interim_sum;

/// One bidder's ex-interim utility as a function of its own action.
pub trait InterimGame: Sync {
    fn action_dim(&self) -> usize;
    fn interim_utility(&self, value: &[f64], action: &[f64]) -> Result<f64>;
}

/// Auction ex-interim utility of `bidder`, estimated against a fixed set of
/// opponent bid samples (common random numbers across all actions).
pub struct AuctionInterim<'a> {
    pub game: &'a Game,
    pub bidder: usize,
    pub opponents: BidBatch,
}

impl<'a> AuctionInterim<'a> {
    pub fn new(game: &'a Game, strategies: &[&dyn Strategy], bidder: usize, samples: usize, rng: &RngState) -> Result<Self> {
        let values = sample_valuations(&game.prior, game.spec(), samples, rng)?;
        let opponents = game.bids(strategies, &values)?;
        Ok(Self { game, bidder, opponents })
    }
}

impl InterimGame for AuctionInterim<'_> {
    fn action_dim(&self) -> usize {
        self.game.spec().bundle_count(self.bidder)
    }

    fn interim_utility(&self, value: &[f64], action: &[f64]) -> Result<f64> {
        Ok(interim_sum(self.game, self.bidder, value, action, &self.opponents)? / self.opponents.len() as f64)
    }
}

/// `u(v, b) = Σ b_k²`: convex in the action, so never payoff monotone.
pub struct AntiMonotone {
    pub dim: usize,
}

impl InterimGame for AntiMonotone {
    fn action_dim(&self) -> usize {
        self.dim
    }

    fn interim_utility(&self, _: &[f64], action: &[f64]) -> Result<f64> {
        Ok(action.iter().map(|b| b * b).sum())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPair {
    pub value: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Pairs drawn on policy: a value v, and actions β(v′), β(v″) for two more
/// independent draws. Pairs with a = b are skipped.
pub fn on_policy_pairs(game: &Game, strategy: &dyn Strategy, bidder: usize, n_pairs: usize, rng: &RngState) -> Result<Vec<ActionPair>> {
    let spec = game.spec();
    let range = spec.slot_range(bidder);
    let k = range.len();
    let draws = sample_valuations(&game.prior, spec, 3 * n_pairs, rng)?;
    let mut pairs = Vec::with_capacity(n_pairs);
    for j in 0..n_pairs {
        let value = draws.row(3 * j)[range.clone()].to_vec();
        let mut a = vec![0.0; k];
        let mut b = vec![0.0; k];
        strategy.bid_into(&draws.row(3 * j + 1)[range.clone()], &mut a);
        strategy.bid_into(&draws.row(3 * j + 2)[range.clone()], &mut b);
        if a != b {
            pairs.push(ActionPair { value, a, b });
        }
    }
    Ok(pairs)
}

/// Finite-difference gradient in the action; central unless the lower point
/// would be a negative bid, then forward.
pub fn action_gradient(game: &dyn InterimGame, value: &[f64], action: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut x = action.to_vec();
    let mut grad = Vec::with_capacity(action.len());
    for k in 0..action.len() {
        let lo = (action[k] - step).max(0.0);
        let hi = lo + 2.0 * step;
        x[k] = hi;
        let up = game.interim_utility(value, &x)?;
        x[k] = lo;
        let down = game.interim_utility(value, &x)?;
        x[k] = action[k];
        grad.push((up - down) / (hi - lo));
    }
    Ok(grad)
}

/// Fraction of pairs with ⟨∇ū(a) − ∇ū(b), a − b⟩ < 0.
pub fn monotonicity_check(game: &dyn InterimGame, pairs: &[ActionPair], fd_step: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidSetting("monotonicity check needs at least one pair".into()));
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidSetting(format!("fd_step must be positive, got {fd_step}")));
    }
    let dim = game.action_dim();
    if pairs.iter().any(|p| p.a.len() != dim || p.b.len() != dim) {
        return Err(Error::Shape(format!("actions must have {dim} entries")));
    }
    let hits = pairs
        .par_iter()
        .map(|p| {
            let ga = action_gradient(game, &p.value, &p.a, fd_step)?;
            let gb = action_gradient(game, &p.value, &p.b, fd_step)?;
            let inner: f64 = (0..dim).map(|k| (ga[k] - gb[k]) * (p.a[k] - p.b[k])).sum();
            Ok(usize::from(inner < 0.0))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / pairs.len() as f64)
}

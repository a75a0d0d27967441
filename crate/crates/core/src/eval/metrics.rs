use rayon::prelude::*;

use crate::auction::{bidder_utility, BidBatch, ValuationBatch};
use crate::error::{Error, Result};
use crate::game::{Game, Strategy};

/// Utility loss from playing `learned[bidder]` instead of the equilibrium
/// strategy while everyone else plays the equilibrium. Both terms use the
/// same valuation batch.
pub fn l_star(game: &Game, learned: &dyn Strategy, oracle: &[&dyn Strategy], bidder: usize, values: &ValuationBatch) -> Result<f64> {
    let bne_bids = game.bids(oracle, values)?;
    let at_bne = game.utility_against_par(bidder, oracle[bidder], values, &bne_bids)?;
    let at_learned = game.utility_against_par(bidder, learned, values, &bne_bids)?;
    Ok(at_bne - at_learned)
}

/// Root mean squared action distance between two strategies of `bidder`,
/// averaged over the bidder's valuations in `values` and its bid dimensions.
pub fn strategy_rmse(game: &Game, learned: &dyn Strategy, target: &dyn Strategy, bidder: usize, values: &ValuationBatch) -> f64 {
    let range = game.spec().slot_range(bidder);
    let k = range.len();
    let mut a = vec![0.0; k];
    let mut b = vec![0.0; k];
    let mut total = 0.0;
    for row in values.rows() {
        learned.bid_into(&row[range.clone()], &mut a);
        target.bid_into(&row[range.clone()], &mut b);
        total += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    (total / (values.len() * k) as f64).sqrt()
}

/// Even product grid over `[0, hi]^dims` with `⌊W^{1/dims}⌋` points per axis.
pub fn action_grid(hi: f64, dims: usize, points: usize) -> Vec<Vec<f64>> {
    let per_axis = ((points as f64).powf(1.0 / dims as f64) + 1e-9).floor().max(2.0) as usize;
    let axis: Vec<f64> = (0..per_axis).map(|j| hi * j as f64 / (per_axis - 1) as f64).collect();
    let mut grid = vec![Vec::new()];
    for _ in 0..dims {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    grid
}

/// Summed utility of `bidder` with valuation `value` bidding `bid` against the
/// recorded opponent bids (the bidder's own entries in `opponents` are ignored).
pub(crate) fn interim_sum(game: &Game, bidder: usize, value: &[f64], bid: &[f64], opponents: &BidBatch) -> Result<f64> {
    let mut each = vec![0.0; opponents.len()];
    interim_utilities(game, bidder, value, bid, opponents, &mut each)?;
    Ok(each.iter().sum())
}

/// Per-sample utilities behind [`interim_sum`].
fn interim_utilities(game: &Game, bidder: usize, value: &[f64], bid: &[f64], opponents: &BidBatch, out: &mut [f64]) -> Result<()> {
    let spec = game.spec();
    let width = spec.n_slots();
    let range = spec.slot_range(bidder);
    let mut values = vec![0.0; width];
    values[range.clone()].copy_from_slice(value);
    let mut row = vec![0.0; width];
    let mut pay = vec![0.0; spec.n_bidders()];
    for (brow, u) in opponents.rows().zip(out) {
        row.copy_from_slice(brow);
        row[range.clone()].copy_from_slice(bid);
        let a = game.auction.outcome_into(&row, &mut pay)?;
        *u = bidder_utility(spec, &values, a, &pay, bidder, game.model);
    }
    Ok(())
}

/// Ex-interim loss estimate for one valuation:
/// `(1/H)·[max_w Σ_h u(v; b_w) − Σ_h u(v; b)]` over the opponent samples.
pub fn lambda_hat(game: &Game, bidder: usize, value: &[f64], bid: &[f64], opponents: &BidBatch, grid: &[Vec<f64>]) -> Result<f64> {
    let own = interim_sum(game, bidder, value, bid, opponents)?;
    let best = grid
        .iter()
        .map(|b| interim_sum(game, bidder, value, b, opponents))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((best - own) / opponents.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterimReport {
    pub l_hat: f64,
    pub eps_hat: f64,
    /// Standard error of `l_hat`. Combines the spread across outer valuations
    /// with the noise of the shared opponent samples, which every λ̂ sees.
    pub l_hat_se: f64,
    pub lambdas: Vec<f64>,
}

const NO_WIN: u32 = u32::MAX;
const OUTER_CHUNK: usize = 64;

/// `ℓ̂` and `ε̂` for `bidder`: λ̂ at each outer valuation with the bidder's
/// own strategy, against one shared set of opponent bids.
///
/// The grid bids do not depend on the outer valuation, so their auction
/// outcomes are computed once per grid point and reused.
pub fn interim_metrics(
    game: &Game,
    strategies: &[&dyn Strategy],
    bidder: usize,
    outer: &ValuationBatch,
    inner: &ValuationBatch,
    grid: &[Vec<f64>],
) -> Result<InterimReport> {
    if !game.prior.is_independent() {
        return Err(Error::Unsupported(
            "interim metrics need an independent prior (no conditional sampling for correlated ones)".into(),
        ));
    }
    let spec = game.spec();
    let range = spec.slot_range(bidder);
    let k = range.len();
    let h = inner.len();
    let opponents = game.bids(strategies, inner)?;

    // outcome table: won bundle (relative slot) and payment per grid point and inner sample
    let table: Vec<(Vec<u32>, Vec<f64>)> = grid
        .par_iter()
        .map(|b| {
            let mut won = Vec::with_capacity(h);
            let mut paid = Vec::with_capacity(h);
            let mut row = vec![0.0; spec.n_slots()];
            let mut pay = vec![0.0; spec.n_bidders()];
            for brow in opponents.rows() {
                row.copy_from_slice(brow);
                row[range.clone()].copy_from_slice(b);
                let a = game.auction.outcome_into(&row, &mut pay)?;
                won.push(spec.won_slot(a, bidder).map_or(NO_WIN, |s| (s - range.start) as u32));
                paid.push(pay[bidder]);
            }
            Ok((won, paid))
        })
        .collect::<Result<_>>()?;

    let risk_neutral = game.model.risk_rho == 1.0;
    // risk neutral: Σ_h u = Σ_slot count_slot·v_slot − Σ_h p_h
    let linear: Vec<(Vec<f64>, f64)> = if risk_neutral {
        table
            .iter()
            .map(|(won, paid)| {
                let mut counts = vec![0.0; k];
                for &w in won {
                    if w != NO_WIN {
                        counts[w as usize] += 1.0;
                    }
                }
                (counts, paid.iter().sum())
            })
            .collect()
    } else {
        Vec::new()
    };

    let own = strategies[bidder];
    let value_of = |v: &[f64], w: u32, p: f64| {
        let value = if w == NO_WIN { 0.0 } else { v[w as usize] };
        game.model.apply(value - p)
    };
    // per chunk of outer rows: their λ̂ and, per opponent sample, the summed
    // utility gap between the chosen grid bid and the own bid
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = outer
        .as_slice()
        .par_chunks(spec.n_slots() * OUTER_CHUNK)
        .map(|rows| {
            let mut lambdas = Vec::with_capacity(OUTER_CHUNK);
            let mut gap = vec![0.0; h];
            let mut each = vec![0.0; h];
            let mut b = vec![0.0; k];
            for vrow in rows.chunks(spec.n_slots()) {
                let v = &vrow[range.clone()];
                own.bid_into(v, &mut b);
                interim_utilities(game, bidder, v, &b, &opponents, &mut each)?;
                let own_sum: f64 = each.iter().sum();
                let sums = table.iter().enumerate().map(|(g, (won, paid))| {
                    if risk_neutral {
                        let (counts, total) = &linear[g];
                        counts.iter().zip(v).map(|(c, x)| c * x).sum::<f64>() - total
                    } else {
                        won.iter().zip(paid).map(|(&w, &p)| value_of(v, w, p)).sum::<f64>()
                    }
                });
                let (arg, best) = sums.enumerate().fold((0, f64::NEG_INFINITY), |acc, (g, x)| if x > acc.1 { (g, x) } else { acc });
                let (won, paid) = &table[arg];
                for (j, d) in gap.iter_mut().enumerate() {
                    *d += value_of(v, won[j], paid[j]) - each[j];
                }
                lambdas.push((best - own_sum) / h as f64);
            }
            Ok((lambdas, gap))
        })
        .collect::<Result<_>>()?;

    let mut lambdas = Vec::with_capacity(outer.len());
    let mut gap = vec![0.0; h];
    for (l, g) in chunks {
        lambdas.extend(l);
        for (a, x) in gap.iter_mut().zip(g) {
            *a += x;
        }
    }

    let n = lambdas.len() as f64;
    let l_hat = lambdas.iter().sum::<f64>() / n;
    let eps_hat = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = lambdas.iter().map(|x| (x - l_hat).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    // gap[j]/n has mean ≈ l_hat over the opponent samples j
    let m = h as f64;
    let inner_var = gap.iter().map(|g| (g / n - l_hat).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    Ok(InterimReport {
        l_hat,
        eps_hat,
        l_hat_se: (var / n + inner_var / m).sqrt(),
        lambdas,
    })
}

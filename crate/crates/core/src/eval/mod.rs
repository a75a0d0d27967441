//! Equilibrium metrics: distance to a known equilibrium (ℓ*, RMSE) and the
//! equilibrium-free interim loss estimates (ℓ̂, ε̂).

mod bne;
mod metrics;
mod monotonicity;

pub use bne::*;
pub use metrics::{action_grid, interim_metrics, l_star, lambda_hat, strategy_rmse, InterimReport};
pub use monotonicity::{action_gradient, monotonicity_check, on_policy_pairs, ActionPair, AntiMonotone, AuctionInterim, InterimGame};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::game::{Game, Strategy};
use crate::priors::sample_valuations;
use crate::rng::{tags, RngState};

/// When to compute the (expensive) interim metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InterimMode {
    Off,
    /// Only at the last evaluation.
    Final,
    #[default]
    Every,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Iterations between evaluations.
    pub interval: usize,
    /// Valuation samples for ℓ*, RMSE and utilities.
    pub h_primary: usize,
    /// Outer and inner sample count for ℓ̂ and ε̂.
    pub h_secondary: usize,
    /// Best-response grid points per bidder.
    pub grid_points: usize,
    /// Grid box is `[0, grid_margin·upper]` per action dimension.
    pub grid_margin: f64,
    pub interim: InterimMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            h_primary: 1 << 16,
            h_secondary: 1 << 10,
            grid_points: 1 << 8,
            grid_margin: 1.2,
            interim: InterimMode::Every,
        }
    }
}

impl EvalConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.interval == 0 {
            out.push("eval.interval must be at least 1".into());
        }
        for (name, v) in [
            ("eval.h_primary", self.h_primary),
            ("eval.h_secondary", self.h_secondary),
            ("eval.grid_points", self.grid_points),
        ] {
            if !v.is_power_of_two() {
                out.push(format!("{name} must be a power of two, got {v}"));
            }
        }
        if !(self.grid_margin > 0.0) {
            out.push(format!("eval.grid_margin must be positive, got {}", self.grid_margin));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderMetrics {
    pub bidder: usize,
    /// Self-play utility on the primary evaluation batch.
    pub utility: f64,
    pub l_star: Option<f64>,
    pub rmse: Option<f64>,
    pub l_hat: Option<f64>,
    pub eps_hat: Option<f64>,
    pub l_hat_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bidders: Vec<BidderMetrics>,
    pub h_primary: usize,
    pub h_secondary: usize,
    pub grid_points: usize,
}

/// All metrics for one strategy profile. The evaluation batches depend only
/// on `rng`, so successive evaluations in a run share them.
pub fn evaluate(
    game: &Game,
    strategies: &[&dyn Strategy],
    oracle: Option<&BneOracle>,
    cfg: &EvalConfig,
    interim: bool,
    rng: &RngState,
) -> Result<MetricReport> {
    let spec = game.spec();
    let n = spec.n_bidders();
    let values = sample_valuations(&game.prior, spec, cfg.h_primary, &rng.substream(tags::EVAL_PRIMARY))?;
    let bids = game.bids(strategies, &values)?;
    let utilities = game.mean_utilities(&values, &bids)?;
    let oracle_refs = oracle.map(|o| o.strategy_refs());

    let interim = interim && game.prior.is_independent();
    let (outer, inner) = if interim {
        let s = rng.substream(tags::EVAL_SECONDARY);
        (
            Some(sample_valuations(&game.prior, spec, cfg.h_secondary, &s.substream(0))?),
            Some(sample_valuations(&game.prior, spec, cfg.h_secondary, &s.substream(1))?),
        )
    } else {
        (None, None)
    };

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut m = BidderMetrics {
            bidder: i,
            utility: utilities[i],
            l_star: None,
            rmse: None,
            l_hat: None,
            eps_hat: None,
            l_hat_se: None,
        };
        if let Some(refs) = &oracle_refs {
            m.l_star = Some(l_star(game, strategies[i], refs, i, &values)?);
            m.rmse = Some(strategy_rmse(game, strategies[i], refs[i], i, &values));
        }
        if let (Some(outer), Some(inner)) = (&outer, &inner) {
            let hi = cfg.grid_margin * game.prior.upper(i, spec);
            let grid = action_grid(hi, spec.bundle_count(i), cfg.grid_points);
            let r = interim_metrics(game, strategies, i, outer, inner, &grid)?;
            m.l_hat = Some(r.l_hat);
            m.eps_hat = Some(r.eps_hat);
            m.l_hat_se = Some(r.l_hat_se);
        }
        out.push(m);
    }
    Ok(MetricReport {
        bidders: out,
        h_primary: cfg.h_primary,
        h_secondary: cfg.h_secondary,
        grid_points: cfg.grid_points,
    })
}

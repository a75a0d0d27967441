//! Neural pseudogradient ascent: every bidder takes an Adam step along its ES
//! pseudogradient against a frozen snapshot of the others.

mod adam;
mod es;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use es::{es_combine, es_gradient, es_noise, EsConfig, EsEstimate};
pub use train::{initial_strategies, train, train_from, LogRow, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::auction::{BidBatch, ValuationBatch};
use crate::error::{Error, Result};
use crate::game::{Game, NetView, Strategy};
use crate::policy::StrategyParams;
use crate::priors::sample_valuations;
use crate::rng::{tags, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub es: EsConfig,
    pub adam: AdamConfig,
    /// Monte-Carlo batch size K per iteration.
    pub batch: usize,
    /// Tie all bidders to bidder 0's parameters (symmetric settings only).
    pub symmetric: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            es: EsConfig::default(),
            adam: AdamConfig::default(),
            batch: 1 << 12,
            symmetric: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub strategies: Vec<StrategyParams>,
    pub adam: Vec<AdamState>,
    /// Completed iterations.
    pub iteration: usize,
}

impl LearnerState {
    pub fn new(strategies: Vec<StrategyParams>, adam: AdamConfig) -> Self {
        let adam = strategies.iter().map(|s| AdamState::new(s.theta.len(), adam)).collect();
        Self {
            strategies,
            adam,
            iteration: 0,
        }
    }

    pub fn strategy_refs(&self) -> Vec<&dyn Strategy> {
        self.strategies.iter().map(|s| s as &dyn Strategy).collect()
    }
}

/// Inputs shared by all bidders within one iteration: the valuation batch
/// and the bids from the frozen snapshot.
pub struct IterationBatch {
    pub values: ValuationBatch,
    pub bids: BidBatch,
}

impl IterationBatch {
    pub fn draw(game: &Game, state: &LearnerState, batch: usize, rng: &RngState) -> Result<Self> {
        let values = sample_valuations(&game.prior, game.spec(), batch, &rng.path(&[tags::TRAIN_VALUATIONS, state.iteration as u64]))?;
        let bids = game.bids(&state.strategy_refs(), &values)?;
        Ok(Self { values, bids })
    }
}

/// ES gradient and Adam step for one bidder. Returns the new parameters,
/// the new Adam state and the bidder's unperturbed utility estimate.
pub fn bidder_step(
    game: &Game,
    cfg: &LearnerConfig,
    state: &LearnerState,
    batch: &IterationBatch,
    bidder: usize,
    rng: &RngState,
) -> Result<(StrategyParams, AdamState, f64)> {
    let current = &state.strategies[bidder];
    let arch = &current.arch;
    let fitness = |theta: &[f64]| {
        let own = NetView { arch, theta };
        game.utility_against(bidder, &own, &batch.values, &batch.bids)
    };
    let noise_rng = rng.path(&[tags::ES_NOISE, state.iteration as u64, bidder as u64]);
    let est = es_gradient(&current.theta, &fitness, &cfg.es, &noise_rng)?;
    let mut adam = state.adam[bidder].clone();
    let delta = adam.step(&est.gradient)?;
    let theta: Vec<f64> = current.theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("strategy parameters"));
    }
    Ok((StrategyParams { arch: arch.clone(), theta }, adam, est.center_fitness))
}

/// One simultaneous NPGA iteration. Returns the next state and each bidder's
/// self-play utility estimate on this iteration's batch.
pub fn npga_iteration(game: &Game, cfg: &LearnerConfig, state: &LearnerState, rng: &RngState) -> Result<(LearnerState, Vec<f64>)> {
    let t = state.iteration;
    let batch = IterationBatch::draw(game, state, cfg.batch, rng).map_err(|e| e.at_iteration(t))?;
    let n = game.n_bidders();
    let learners = if cfg.symmetric { 1 } else { n };
    let mut next = state.clone();
    for i in 0..learners {
        let (params, adam, _) = bidder_step(game, cfg, state, &batch, i, rng).map_err(|e| e.at_iteration(t))?;
        next.strategies[i] = params;
        next.adam[i] = adam;
    }
    if cfg.symmetric {
        for i in 1..n {
            next.strategies[i] = next.strategies[0].clone();
            next.adam[i] = next.adam[0].clone();
        }
    }
    next.iteration = t + 1;
    let utilities = game.mean_utilities(&batch.values, &batch.bids).map_err(|e| e.at_iteration(t))?;
    Ok((next, utilities))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{Auction, PaymentRule, SettingSpec, UtilityModel};
    use crate::policy::Architecture;
    use crate::priors::PriorSpec;

    fn setup() -> (Game, LearnerState, LearnerConfig) {
        let spec = SettingSpec::single_item(3).unwrap();
        let game = Game::new(Auction::new(spec.clone(), PaymentRule::FirstPrice).unwrap(), PriorSpec::uniform(0.0, 1.0), UtilityModel::RISK_NEUTRAL).unwrap();
        let strategies = (0..3)
            .map(|i| Architecture::for_bidder(&spec, i).init_params(&RngState::new(10 + i as u64)))
            .collect();
        let cfg = LearnerConfig {
            batch: 256,
            es: EsConfig { population: 8, ..EsConfig::default() },
            ..LearnerConfig::default()
        };
        (game, LearnerState::new(strategies, cfg.adam), cfg)
    }

    #[test]
    fn every_bidder_moves() {
        let (game, state, cfg) = setup();
        let (next, u) = npga_iteration(&game, &cfg, &state, &RngState::new(1)).unwrap();
        assert_eq!(next.iteration, 1);
        assert_eq!(u.len(), 3);
        for i in 0..3 {
            assert_ne!(next.strategies[i].theta, state.strategies[i].theta);
            assert!(next.strategies[i].theta.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn update_order_is_irrelevant() {
        let (game, state, cfg) = setup();
        let rng = RngState::new(3);
        let (next, _) = npga_iteration(&game, &cfg, &state, &rng).unwrap();
        let batch = IterationBatch::draw(&game, &state, cfg.batch, &rng).unwrap();
        for i in [2, 0, 1] {
            let (p, a, _) = bidder_step(&game, &cfg, &state, &batch, i, &rng).unwrap();
            assert_eq!(p, next.strategies[i]);
            assert_eq!(a, next.adam[i]);
        }
    }

    #[test]
    fn symmetric_mode_ties_parameters() {
        let (game, mut state, mut cfg) = setup();
        cfg.symmetric = true;
        for i in 1..3 {
            state.strategies[i] = state.strategies[0].clone();
        }
        let (next, _) = npga_iteration(&game, &cfg, &state, &RngState::new(5)).unwrap();
        assert_eq!(next.strategies[0], next.strategies[2]);
    }
}

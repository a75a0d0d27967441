use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::{npga_iteration, LearnerConfig, LearnerState};
use crate::error::Result;
use crate::eval::{evaluate, known_bne, BneOracle, EvalConfig, InterimMode, MetricReport};
use crate::game::Game;
use crate::policy::{pretrain_truthful, Architecture, PretrainConfig, StrategyParams};
use crate::rng::{tags, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub hidden: Vec<usize>,
    pub learner: LearnerConfig,
    /// `None` skips pretraining.
    pub pretrain: Option<PretrainConfig>,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            hidden: vec![10, 10],
            learner: LearnerConfig::default(),
            pretrain: Some(PretrainConfig::default()),
            eval: EvalConfig::default(),
        }
    }
}

/// One training-log row (one bidder at one evaluation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub bidder: usize,
    pub utility_estimate: f64,
    pub l_star: Option<f64>,
    pub rmse: Option<f64>,
    pub l_hat: Option<f64>,
    pub eps_hat: Option<f64>,
    /// Seconds since the start of the run, pretraining included.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: LearnerState,
    pub log: Vec<LogRow>,
    /// Evaluations as `(iteration, report)`.
    pub reports: Vec<(usize, MetricReport)>,
    /// Per-iteration self-play utilities on the training batch.
    pub utilities: Vec<Vec<f64>>,
    /// Final pretraining RMSE per bidder (empty without pretraining).
    pub pretrain_rmse: Vec<f64>,
    pub oracle: Option<BneOracle>,
}

/// Fresh networks for every bidder, pretrained to truthful bidding unless
/// disabled. Returns the strategies and the pretraining RMSEs.
pub fn initial_strategies(game: &Game, cfg: &TrainConfig, rng: &RngState) -> Result<(Vec<StrategyParams>, Vec<f64>)> {
    let spec = game.spec();
    let n = spec.n_bidders();
    let owners = if cfg.learner.symmetric { 1 } else { n };
    let mut strategies = Vec::with_capacity(n);
    let mut rmse = Vec::new();
    for i in 0..owners {
        let arch = Architecture::new(spec.bundle_count(i), cfg.hidden.clone(), spec.bundle_count(i))?;
        let init = arch.init_params(&rng.path(&[tags::INIT, i as u64]));
        let params = match &cfg.pretrain {
            Some(p) => {
                let out = pretrain_truthful(&init, &game.prior, spec, i, p, &rng.path(&[tags::PRETRAIN, i as u64]))?;
                info!("bidder {i}: pretrained to RMSE {:.4} in {} iterations", out.rmse, out.iterations);
                rmse.push(out.rmse);
                out.params
            }
            None => init,
        };
        strategies.push(params);
    }
    while strategies.len() < n {
        strategies.push(strategies[0].clone());
        if let Some(&r) = rmse.first() {
            rmse.push(r);
        }
    }
    Ok((strategies, rmse))
}

/// Pretraining followed by `cfg.iterations` NPGA iterations, evaluated at
/// iteration 0, every `cfg.eval.interval` iterations and at the end.
pub fn train(game: &Game, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let start = Instant::now();
    let rng = RngState::new(seed);
    let (strategies, pretrain_rmse) = initial_strategies(game, cfg, &rng)?;
    let mut out = train_from(game, cfg, LearnerState::new(strategies, cfg.learner.adam), &rng, start)?;
    out.pretrain_rmse = pretrain_rmse;
    Ok(out)
}

/// Training from given strategies; `start` is the clock origin for the log.
pub fn train_from(game: &Game, cfg: &TrainConfig, mut state: LearnerState, rng: &RngState, start: Instant) -> Result<TrainOutcome> {
    let oracle = known_bne(game)?;
    let eval_rng = rng.substream(tags::EVAL_PRIMARY);
    let total = state.iteration + cfg.iterations;
    let mut out = TrainOutcome {
        state: state.clone(),
        log: Vec::new(),
        reports: Vec::new(),
        utilities: Vec::new(),
        pretrain_rmse: Vec::new(),
        oracle: None,
    };
    let record = |state: &LearnerState, out: &mut TrainOutcome| -> Result<()> {
        let t = state.iteration;
        let interim = match cfg.eval.interim {
            InterimMode::Off => false,
            InterimMode::Final => t == total,
            InterimMode::Every => true,
        };
        let report = evaluate(game, &state.strategy_refs(), oracle.as_ref(), &cfg.eval, interim, &eval_rng)
            .map_err(|e| e.at_iteration(t))?;
        let wall = start.elapsed().as_secs_f64();
        for m in &report.bidders {
            out.log.push(LogRow {
                iteration: t,
                bidder: m.bidder,
                utility_estimate: m.utility,
                l_star: m.l_star,
                rmse: m.rmse,
                l_hat: m.l_hat,
                eps_hat: m.eps_hat,
                wall_time_s: wall,
            });
        }
        info!(
            "iteration {t}: utilities {:?}",
            report.bidders.iter().map(|m| m.utility).collect::<Vec<_>>()
        );
        out.reports.push((t, report));
        Ok(())
    };
    record(&state, &mut out)?;
    while state.iteration < total {
        let (next, utilities) = npga_iteration(game, &cfg.learner, &state, rng)?;
        state = next;
        out.utilities.push(utilities);
        if state.iteration % cfg.eval.interval == 0 || state.iteration == total {
            record(&state, &mut out)?;
        }
    }
    out.state = state;
    out.oracle = oracle;
    Ok(out)
}

//! Running experiments and writing their outputs.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.toml            resolved configuration
//! summary.json           final metrics per seed and their mean/min/max
//! seed-<s>/log.csv       one row per evaluation and bidder
//! seed-<s>/utilities.csv self-play utility per training iteration
//! seed-<s>/checkpoint.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{error, info};
use serde::{Deserialize, Serialize};

use npga_core::eval::MetricReport;
use npga_core::learner::{train, LogRow, TrainOutcome};
use npga_core::policy::write_checkpoint;

use crate::config::{to_toml, ExperimentConfig};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Metric names in log and summary files, in column order.
pub const METRICS: [&str; 5] = ["utility", "l_star", "rmse", "l_hat", "eps_hat"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub bidder: usize,
    pub utility: f64,
    pub l_star: Option<f64>,
    pub rmse: Option<f64>,
    pub l_hat: Option<f64>,
    pub eps_hat: Option<f64>,
}

impl FinalMetrics {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "utility" => Some(self.utility),
            "l_star" => self.l_star,
            "rmse" => self.rmse,
            "l_hat" => self.l_hat,
            "eps_hat" => self.eps_hat,
            _ => None,
        }
    }

    fn from_report(report: &MetricReport) -> Vec<Self> {
        report
            .bidders
            .iter()
            .map(|m| FinalMetrics {
                bidder: m.bidder,
                utility: m.utility,
                l_star: m.l_star,
                rmse: m.rmse,
                l_hat: m.l_hat,
                eps_hat: m.eps_hat,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub iterations: usize,
    pub time_s_per_iteration: f64,
    pub pretrain_rmse: Vec<f64>,
    pub bidders: Vec<FinalMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        Some(Band {
            mean: xs.iter().sum::<f64>() / xs.len() as f64,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderAggregate {
    pub bidder: usize,
    pub utility: Option<Band>,
    pub l_star: Option<Band>,
    pub rmse: Option<Band>,
    pub l_hat: Option<Band>,
    pub eps_hat: Option<Band>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub runs: Vec<SeedSummary>,
    pub aggregate: Vec<BidderAggregate>,
    pub time_s_per_iteration: Option<Band>,
    pub failures: Vec<RunFailure>,
}

impl Summary {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn aggregate(runs: &[SeedSummary]) -> Vec<BidderAggregate> {
    let n = runs.first().map_or(0, |r| r.bidders.len());
    (0..n)
        .map(|i| {
            let band = |metric: &str| {
                let xs: Vec<f64> = runs.iter().filter_map(|r| r.bidders.get(i).and_then(|m| m.get(metric))).collect();
                Band::of(&xs)
            };
            BidderAggregate {
                bidder: i,
                utility: band("utility"),
                l_star: band("l_star"),
                rmse: band("rmse"),
                l_hat: band("l_hat"),
                eps_hat: band("eps_hat"),
            }
        })
        .collect()
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

pub fn write_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<std::result::Result<_, _>>().with_context(|| format!("reading {}", path.display()))
}

fn write_utilities(path: &Path, utilities: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = utilities.first().map_or(0, |u| u.len());
    let mut header = vec!["iteration".to_string()];
    header.extend((0..n).map(|i| format!("bidder_{i}")));
    w.write_record(&header)?;
    for (t, u) in utilities.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(u.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn seed_summary(seed: u64, out: &TrainOutcome) -> SeedSummary {
    let (last_t, last) = out.reports.last().expect("at least the initial evaluation");
    let first_wall = out.log.first().map_or(0.0, |r| r.wall_time_s);
    let last_wall = out.log.last().map_or(0.0, |r| r.wall_time_s);
    SeedSummary {
        seed,
        iterations: *last_t,
        time_s_per_iteration: if *last_t > 0 { (last_wall - first_wall) / *last_t as f64 } else { 0.0 },
        pretrain_rmse: out.pretrain_rmse.clone(),
        bidders: FinalMetrics::from_report(last),
    }
}

/// One training run for `seed`, with its files written under `dir`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<(SeedSummary, TrainOutcome)> {
    let game = cfg.game()?;
    let out = train(&game, &cfg.train_config(), seed)?;
    fs::create_dir_all(dir)?;
    write_log(&dir.join("log.csv"), &out.log)?;
    write_utilities(&dir.join("utilities.csv"), &out.utilities)?;
    let file = fs::File::create(dir.join("checkpoint.txt"))?;
    write_checkpoint(std::io::BufWriter::new(file), &out.state.strategies)?;
    let summary = seed_summary(seed, &out);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok((summary, out))
}

/// Every seed of `cfg`, in order. A failing seed is recorded and the others
/// still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    fs::write(root.join("config.toml"), to_toml(cfg))?;
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        info!("seed {seed}: training");
        match run_seed(cfg, seed, &seed_dir(root, seed)) {
            Ok((s, _)) => runs.push(s),
            Err(e) => {
                error!("seed {seed} failed: {e:#}");
                failures.push(RunFailure {
                    seed,
                    error: format!("{e:#}"),
                });
            }
        }
    }
    let times: Vec<f64> = runs.iter().map(|r| r.time_s_per_iteration).collect();
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config: cfg.clone(),
        aggregate: aggregate(&runs),
        time_s_per_iteration: Band::of(&times),
        runs,
        failures,
    };
    fs::write(root.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

//! Plot-ready tables from finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use npga_core::eval::{known_bne, BneOracle};
use npga_core::game::{Game, Strategy};
use npga_core::learner::LogRow;
use npga_core::policy::read_checkpoint;

use crate::config::parse_config;
use crate::run::{read_log, seed_dir, Band};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub iteration: usize,
    pub bidder: usize,
    pub metric: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub seed: u64,
    pub bidder: usize,
    pub slot: usize,
    pub value: f64,
    pub learned_bid: f64,
    pub bne_bid: Option<f64>,
}

fn metric(row: &LogRow, name: &str) -> Option<f64> {
    match name {
        "utility" => Some(row.utility_estimate),
        "l_star" => row.l_star,
        "rmse" => row.rmse,
        "l_hat" => row.l_hat,
        "eps_hat" => row.eps_hat,
        _ => None,
    }
}

/// Mean/min/max across runs per iteration, bidder and metric.
pub fn aggregate_series(logs: &[Vec<LogRow>]) -> Vec<SeriesRow> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for log in logs {
        for row in log {
            for (k, name) in crate::run::METRICS.iter().enumerate() {
                if let Some(x) = metric(row, name) {
                    groups.entry((row.iteration, row.bidder, k)).or_default().push(x);
                }
            }
        }
    }
    groups
        .into_iter()
        .map(|((iteration, bidder, k), xs)| {
            let b = Band::of(&xs).expect("nonempty group");
            SeriesRow {
                iteration,
                bidder,
                metric: crate::run::METRICS[k].to_string(),
                mean: b.mean,
                min: b.min,
                max: b.max,
                runs: xs.len(),
            }
        })
        .collect()
}

/// Bids of each bidder on an even value grid over `[0, upper]`, with every
/// bundle of the bidder given the same value.
pub fn strategy_dump(game: &Game, strategies: &[&dyn Strategy], oracle: Option<&BneOracle>, points: usize, seed: u64) -> Vec<StrategyRow> {
    let spec = game.spec();
    let mut rows = Vec::new();
    for (i, s) in strategies.iter().enumerate() {
        let k = spec.bundle_count(i);
        let hi = game.prior.upper(i, spec);
        let mut learned = vec![0.0; k];
        let mut bne = vec![0.0; k];
        for j in 0..points {
            let v = hi * j as f64 / (points - 1).max(1) as f64;
            let values = vec![v; k];
            s.bid_into(&values, &mut learned);
            if let Some(o) = oracle {
                o.bidders[i].bid_into(&values, &mut bne);
            }
            for slot in 0..k {
                rows.push(StrategyRow {
                    seed,
                    bidder: i,
                    slot,
                    value: v,
                    learned_bid: learned[slot],
                    bne_bid: oracle.map(|_| bne[slot]),
                });
            }
        }
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub struct PlotFiles {
    pub series: PathBuf,
    pub strategies: PathBuf,
}

/// Writes `plot/series.csv` and `plot/strategies.csv` for the run in `dir`.
pub fn emit_plot_data(dir: &Path, points: usize) -> Result<PlotFiles> {
    let cfg = parse_config(&dir.join("config.toml"))?;
    let game = cfg.game()?;
    let oracle = known_bne(&game)?;
    let mut logs = Vec::new();
    let mut dump = Vec::new();
    for &seed in &cfg.seeds {
        let sd = seed_dir(dir, seed);
        if !sd.join("log.csv").exists() {
            continue;
        }
        logs.push(read_log(&sd.join("log.csv"))?);
        let file = fs::File::open(sd.join("checkpoint.txt")).with_context(|| format!("seed {seed}: no checkpoint"))?;
        let strategies = read_checkpoint(std::io::BufReader::new(file))?;
        let refs: Vec<&dyn Strategy> = strategies.iter().map(|s| s as &dyn Strategy).collect();
        dump.extend(strategy_dump(&game, &refs, oracle.as_ref(), points, seed));
    }
    if logs.is_empty() {
        bail!("no run logs under {}", dir.display());
    }
    let out = dir.join("plot");
    fs::create_dir_all(&out)?;
    let files = PlotFiles {
        series: out.join("series.csv"),
        strategies: out.join("strategies.csv"),
    };
    write_rows(&files.series, &aggregate_series(&logs))?;
    write_rows(&files.strategies, &dump)?;
    Ok(files)
}

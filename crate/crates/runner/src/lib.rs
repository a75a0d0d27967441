//! Experiment orchestration for NPGA: configuration files, presets, runs
//! with logs and checkpoints, and plot data.

pub mod config;
pub mod plot;
pub mod presets;
pub mod run;

pub use config::{parse_config, parse_config_str, to_toml, ConfigError, ExperimentConfig, Setting};
pub use plot::{aggregate_series, emit_plot_data, strategy_dump, PlotFiles, SeriesRow, StrategyRow};
pub use presets::{preset, presets};
pub use run::{read_log, run_experiment, run_seed, seed_dir, Band, SeedSummary, Summary};

/// Environment variable overriding the worker-thread count.
pub const WORKERS_ENV: &str = "NPGA_WORKERS";

/// Sets up the global thread pool from [`WORKERS_ENV`], if set.
pub fn init_workers() -> anyhow::Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(s) => {
            let n: usize = s.trim().parse().map_err(|_| anyhow::anyhow!("{WORKERS_ENV} must be a positive integer, got {s:?}"))?;
            if n == 0 {
                anyhow::bail!("{WORKERS_ENV} must be a positive integer, got 0");
            }
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

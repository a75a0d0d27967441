use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use npga_core::eval::{evaluate, known_bne, InterimMode};
use npga_core::game::Strategy;
use npga_core::policy::read_checkpoint;
use npga_core::rng::RngState;
use npga_runner::{emit_plot_data, init_workers, parse_config, preset, presets, run_experiment};

#[derive(Parser)]
#[command(name = "npga", about = "Equilibrium learning in auctions with neural pseudogradient ascent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every seed of a config file (or a preset with --preset).
    Run {
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under a config and print the metrics as JSON.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the built-in presets, or print one as TOML.
    Presets { name: Option<String> },
    /// Write aggregated learning curves and strategy dumps for a run directory.
    Plotdata {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    init_workers()?;
    match cli.command {
        Command::Run { config, preset: name, out } => {
            let mut cfg = match (config, name) {
                (Some(path), None) => parse_config(&path)?,
                (None, Some(name)) => preset(&name).with_context(|| format!("unknown preset {name:?}"))?,
                _ => bail!("give either a config file or --preset"),
            };
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let summary = run_experiment(&cfg)?;
            println!("{}", cfg.output_dir.join("summary.json").display());
            Ok(if summary.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Eval { checkpoint, config, seed } => {
            let cfg = parse_config(&config)?;
            let game = cfg.game()?;
            let file = std::fs::File::open(&checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
            let strategies = read_checkpoint(std::io::BufReader::new(file))?;
            let refs: Vec<&dyn Strategy> = strategies.iter().map(|s| s as &dyn Strategy).collect();
            let oracle = known_bne(&game)?;
            let tc = cfg.train_config();
            let interim = tc.eval.interim != InterimMode::Off;
            let report = evaluate(&game, &refs, oracle.as_ref(), &tc.eval, interim, &RngState::new(seed))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { name: None } => {
            for p in presets() {
                println!("{:<32} {}", p.name, p.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { name: Some(name) } => {
            let cfg = preset(&name).with_context(|| format!("unknown preset {name:?}"))?;
            print!("{}", npga_runner::config::to_toml(&cfg));
            Ok(ExitCode::SUCCESS)
        }
        Command::Plotdata { run_dir, points } => {
            let files = emit_plot_data(&run_dir, points)?;
            println!("{}\n{}", files.series.display(), files.strategies.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

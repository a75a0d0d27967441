//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use npga_core::auction::{Auction, PaymentRule, SettingSpec, UtilityModel};
use npga_core::eval::{EvalConfig, InterimMode};
use npga_core::game::Game;
use npga_core::learner::{AdamConfig, EsConfig, LearnerConfig, TrainConfig};
use npga_core::policy::PretrainConfig;
use npga_core::priors::PriorSpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    SingleItem,
    Llg,
    Llllgg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSizes {
    /// Valuation samples per learning iteration (K).
    pub learning: usize,
    pub h_primary: usize,
    pub h_secondary: usize,
    pub grid_points: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        let eval = EvalConfig::default();
        Self {
            learning: LearnerConfig::default().batch,
            h_primary: eval.h_primary,
            h_secondary: eval.h_secondary,
            grid_points: eval.grid_points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub interval: usize,
    pub interim: InterimMode,
    pub grid_margin: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            interval: e.interval,
            interim: e.interim,
            grid_margin: e.grid_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub enabled: bool,
    pub iterations: usize,
    pub batch: usize,
    pub rmse_fraction: f64,
    pub lr: f64,
    pub population: usize,
    pub max_retries: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            enabled: true,
            iterations: p.iterations,
            batch: p.batch,
            rmse_fraction: p.rmse_fraction,
            lr: p.lr,
            population: p.population,
            max_retries: p.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Setting,
    /// Required for single-item auctions; fixed by the setting otherwise.
    #[serde(default)]
    pub n_bidders: Option<usize>,
    pub rule: PaymentRule,
    /// Defaults: U(0, 10) for single-item, U(0, 1) locals and U(0, 2)
    /// globals for the local-global settings.
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default = "one")]
    pub risk_rho: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub symmetric: bool,
    #[serde(default)]
    pub es: EsConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub batch: BatchSizes,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
}

fn one() -> f64 {
    1.0
}

fn default_iterations() -> usize {
    2000
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_hidden() -> Vec<usize> {
    vec![10, 10]
}

impl ExperimentConfig {
    pub fn new(setting: Setting, rule: PaymentRule) -> Self {
        Self {
            setting,
            n_bidders: None,
            rule,
            prior: None,
            risk_rho: 1.0,
            iterations: default_iterations(),
            seeds: default_seeds(),
            output_dir: default_output(),
            hidden: default_hidden(),
            symmetric: false,
            es: EsConfig::default(),
            adam: AdamConfig::default(),
            batch: BatchSizes::default(),
            eval: EvalSection::default(),
            pretrain: PretrainSection::default(),
        }
    }

    pub fn setting_spec(&self) -> npga_core::Result<SettingSpec> {
        match self.setting {
            Setting::SingleItem => SettingSpec::single_item(self.n_bidders.unwrap_or(2)),
            Setting::Llg => Ok(SettingSpec::llg()),
            Setting::Llllgg => Ok(SettingSpec::llllgg()),
        }
    }

    pub fn prior_spec(&self, spec: &SettingSpec) -> PriorSpec {
        match (&self.prior, self.setting) {
            (Some(p), _) => p.clone(),
            (None, Setting::SingleItem) => PriorSpec::uniform(0.0, 10.0),
            (None, _) => PriorSpec::local_global(spec),
        }
    }

    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let fixed = match self.setting {
            Setting::SingleItem => None,
            Setting::Llg => Some(3),
            Setting::Llllgg => Some(6),
        };
        match (self.setting, self.n_bidders, fixed) {
            (Setting::SingleItem, None, _) => out.push("n_bidders is required for single_item".into()),
            (Setting::SingleItem, Some(0), _) => out.push("n_bidders must be at least 1".into()),
            (_, Some(n), Some(f)) if n != f => out.push(format!("n_bidders must be {f} for this setting, got {n}")),
            _ => {}
        }
        if !(self.risk_rho > 0.0 && self.risk_rho <= 1.0) {
            out.push(format!("risk_rho must lie in (0, 1], got {}", self.risk_rho));
        }
        if self.seeds.is_empty() {
            out.push("seeds must not be empty".into());
        }
        if self.hidden.contains(&0) {
            out.push("hidden layer widths must be positive".into());
        }
        out.extend(self.es.problems("es"));
        out.extend(self.adam.problems("adam"));
        for (name, v) in [
            ("batch.learning", self.batch.learning),
            ("batch.h_primary", self.batch.h_primary),
            ("batch.h_secondary", self.batch.h_secondary),
            ("batch.grid_points", self.batch.grid_points),
            ("pretrain.batch", self.pretrain.batch),
        ] {
            if !v.is_power_of_two() {
                out.push(format!("{name} must be a power of two, got {v}"));
            }
        }
        if self.eval.interval == 0 {
            out.push("eval.interval must be at least 1".into());
        }
        if !(self.eval.grid_margin > 0.0) {
            out.push(format!("eval.grid_margin must be positive, got {}", self.eval.grid_margin));
        }
        if self.pretrain.enabled {
            if self.pretrain.iterations == 0 {
                out.push("pretrain.iterations must be at least 1".into());
            }
            if !(self.pretrain.lr > 0.0) {
                out.push(format!("pretrain.lr must be positive, got {}", self.pretrain.lr));
            }
            if self.pretrain.population == 0 {
                out.push("pretrain.population must be at least 1".into());
            }
        }
        if let Ok(spec) = self.setting_spec() {
            if self.symmetric && !(self.setting == Setting::SingleItem && self.prior_spec(&spec).is_symmetric()) {
                out.push("symmetric = true needs a single-item setting with a symmetric prior".into());
            }
            let prior = self.prior_spec(&spec);
            out.extend(prior.problems(&spec));
            if !prior.is_independent() && self.eval.interim != InterimMode::Off {
                out.push(
                    "interim metrics (l_hat, eps_hat) are unsupported with a correlated prior; set eval.interim = \"off\"".into(),
                );
            }
            if let Err(e) = Auction::new(spec, self.rule) {
                out.push(format!("rule: {e}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(p))
        }
    }

    pub fn game(&self) -> npga_core::Result<Game> {
        let spec = self.setting_spec()?;
        let prior = self.prior_spec(&spec);
        Game::new(Auction::new(spec, self.rule)?, prior, UtilityModel::new(self.risk_rho)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            hidden: self.hidden.clone(),
            learner: LearnerConfig {
                es: self.es,
                adam: self.adam,
                batch: self.batch.learning,
                symmetric: self.symmetric,
            },
            pretrain: self.pretrain.enabled.then(|| PretrainConfig {
                iterations: self.pretrain.iterations,
                batch: self.pretrain.batch,
                rmse_fraction: self.pretrain.rmse_fraction,
                lr: self.pretrain.lr,
                population: self.pretrain.population,
                max_retries: self.pretrain.max_retries,
            }),
            eval: EvalConfig {
                interval: self.eval.interval,
                h_primary: self.batch.h_primary,
                h_secondary: self.batch.h_secondary,
                grid_points: self.batch.grid_points,
                grid_margin: self.eval.grid_margin,
                interim: self.eval.interim,
            },
        }
    }
}

pub fn parse_config_str(text: &str, path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a TOML experiment file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })?;
    parse_config_str(&text, path)
}

pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

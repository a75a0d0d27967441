//! Built-in experiment presets: the single-item, LLG and LLLLGG benchmark
//! settings at desk-scale batch sizes.

use npga_core::auction::PaymentRule;
use npga_core::eval::InterimMode;
use npga_core::priors::PriorSpec;

use crate::config::{ExperimentConfig, Setting};

pub struct Preset {
    pub name: String,
    pub description: String,
    pub config: ExperimentConfig,
}

fn single_item(prior: &str, n: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Setting::SingleItem, PaymentRule::FirstPrice);
    c.n_bidders = Some(n);
    match prior {
        "uniform" => c.prior = Some(PriorSpec::uniform(0.0, 10.0)),
        "uniform-risk-averse" => {
            c.prior = Some(PriorSpec::uniform(0.0, 10.0));
            c.risk_rho = 0.5;
        }
        _ => {
            c.prior = Some(PriorSpec::Gaussian {
                mean: 15.0,
                stddev: 10.0,
            })
        }
    }
    c
}

fn llg(rule: PaymentRule, gamma: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Setting::Llg, rule);
    if gamma > 0.0 {
        c.prior = Some(PriorSpec::correlated_llg(gamma));
        c.eval.interim = InterimMode::Off;
    }
    c
}

fn llllgg(rule: PaymentRule) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Setting::Llllgg, rule);
    c.batch.learning = 1 << 10;
    c.batch.h_primary = 1 << 12;
    c.batch.h_secondary = 1 << 7;
    c.eval.interim = InterimMode::Final;
    if rule != PaymentRule::FirstPrice {
        c.iterations = 50;
    } else {
        c.iterations = 500;
    }
    c
}

/// ES noise scale used by every preset. The library default `1/√d` leaves a
/// visible smoothing bias within a few thousand iterations at these batch sizes.
pub const PRESET_SIGMA: f64 = 0.01;

/// All presets, in a fixed order.
pub fn presets() -> Vec<Preset> {
    let mut out = benchmark_presets();
    for p in &mut out {
        p.config.es.sigma = Some(PRESET_SIGMA);
    }
    out
}

fn benchmark_presets() -> Vec<Preset> {
    let mut out = Vec::new();
    for (prior, label) in [
        ("uniform", "U(0,10), risk-neutral"),
        ("uniform-risk-averse", "U(0,10), risk-averse (rho = 0.5)"),
        ("gaussian", "N(15,10^2), risk-neutral"),
    ] {
        for n in [2, 3, 5, 10] {
            let mut config = single_item(prior, n);
            config.output_dir = format!("runs/fpsb-{prior}-{n}").into();
            out.push(Preset {
                name: format!("fpsb-{prior}-{n}"),
                description: format!("first-price single item, {n} bidders, {label}"),
                config,
            });
        }
    }
    for (rule, tag) in [
        (PaymentRule::NearestVcg, "nearest-vcg"),
        (PaymentRule::NearestBid, "nearest-bid"),
        (PaymentRule::NearestZero, "nearest-zero"),
    ] {
        for (gamma, dep) in [(0.0, "independent"), (0.5, "correlated")] {
            let mut config = llg(rule, gamma);
            config.output_dir = format!("runs/llg-{tag}-{dep}").into();
            out.push(Preset {
                name: format!("llg-{tag}-{dep}"),
                description: format!("LLG, {tag} payments, {dep} locals"),
                config,
            });
        }
    }
    let mut config = llg(PaymentRule::FirstPrice, 0.0);
    config.output_dir = "runs/llg-first-price-independent".into();
    out.push(Preset {
        name: "llg-first-price-independent".into(),
        description: "LLG, first-price payments, independent locals (no known equilibrium)".into(),
        config,
    });
    for (rule, tag) in [(PaymentRule::FirstPrice, "first-price"), (PaymentRule::NearestVcg, "nearest-vcg")] {
        let mut config = llllgg(rule);
        config.output_dir = format!("runs/llllgg-{tag}").into();
        out.push(Preset {
            name: format!("llllgg-{tag}"),
            description: format!("LLLLGG, {tag} payments (no known equilibrium)"),
            config,
        });
    }
    let mut config = ExperimentConfig::new(Setting::SingleItem, PaymentRule::SecondPrice);
    config.n_bidders = Some(2);
    config.iterations = 1000;
    config.output_dir = "runs/vickrey-uniform-2".into();
    out.push(Preset {
        name: "vickrey-uniform-2".into(),
        description: "second-price single item, 2 bidders, U(0,10) (sanity check)".into(),
        config,
    });
    out
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    presets().into_iter().find(|p| p.name == name).map(|p| p.config)
}

use std::path::Path;

use npga_core::auction::PaymentRule;
use npga_core::eval::InterimMode;
use npga_runner::{parse_config_str, preset, presets, to_toml, ConfigError, ExperimentConfig, Setting};

fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_str(text, Path::new("test.toml"))
}

fn messages(e: ConfigError) -> Vec<String> {
    match e {
        ConfigError::Invalid(p) => p,
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn minimal_config_gets_defaults() {
    let c = parse("setting = \"single_item\"\nn_bidders = 2\nrule = \"first_price\"\n").unwrap();
    assert_eq!(c.iterations, 2000);
    assert_eq!(c.hidden, vec![10, 10]);
    assert_eq!(c.es.population, 64);
    assert_eq!(c.es.sigma, None);
    assert!(c.es.baseline);
    assert_eq!(c.batch.learning, 1 << 12);
    assert_eq!(c.batch.h_primary, 1 << 16);
    assert_eq!(c.batch.h_secondary, 1 << 10);
    assert_eq!(c.batch.grid_points, 1 << 8);
    assert_eq!(c.risk_rho, 1.0);
    assert!(c.pretrain.enabled);
    assert_eq!(c, {
        let mut d = ExperimentConfig::new(Setting::SingleItem, PaymentRule::FirstPrice);
        d.n_bidders = Some(2);
        d
    });
}

#[test]
fn negative_sigma_names_the_field() {
    let p = messages(parse("setting = \"llg\"\nrule = \"nearest_vcg\"\n[es]\nsigma = -0.1\n").unwrap_err());
    assert_eq!(p.len(), 1);
    assert!(p[0].contains("es.sigma"), "{p:?}");
}

#[test]
fn every_problem_is_reported() {
    let text = "setting = \"single_item\"\nn_bidders = 2\nrule = \"first_price\"\nrisk_rho = 2.0\nseeds = []\n[batch]\nlearning = 1000\n";
    let p = messages(parse(text).unwrap_err());
    assert_eq!(p.len(), 3, "{p:?}");
    assert!(p.iter().any(|m| m.contains("risk_rho")));
    assert!(p.iter().any(|m| m.contains("seeds")));
    assert!(p.iter().any(|m| m.contains("batch.learning")));
}

#[test]
fn correlated_llg_with_interim_metrics_is_rejected() {
    let mut c = preset("llg-nearest-zero-correlated").unwrap();
    assert!(c.validate().is_ok());
    c.eval.interim = InterimMode::Final;
    let p = messages(c.validate().unwrap_err());
    assert!(p.iter().any(|m| m.contains("interim")), "{p:?}");
}

#[test]
fn unknown_keys_are_rejected() {
    for text in [
        "setting = \"llg\"\nrule = \"nearest_vcg\"\nsigma = 0.1\n",
        "setting = \"llg\"\nrule = \"nearest_vcg\"\n[es]\nsigmaa = 0.1\n",
    ] {
        match parse(text).unwrap_err() {
            ConfigError::Parse { message, .. } => assert!(message.contains("sigma"), "{message}"),
            other => panic!("{other}"),
        }
    }
}

#[test]
fn wrong_bidder_count_for_fixed_settings() {
    let p = messages(parse("setting = \"llg\"\nn_bidders = 4\nrule = \"nearest_vcg\"\n").unwrap_err());
    assert!(p[0].contains("n_bidders"));
    assert!(parse("setting = \"single_item\"\nrule = \"vickrey\"\n").is_err());
}

#[test]
fn presets_cover_the_benchmarks_and_validate() {
    let all = presets();
    let count = |prefix: &str| all.iter().filter(|p| p.name.starts_with(prefix)).count();
    assert_eq!(count("fpsb-"), 12);
    assert_eq!(count("llg-"), 7);
    assert_eq!(count("llllgg-"), 2);
    for p in &all {
        p.config.validate().unwrap_or_else(|e| panic!("{}: {e}", p.name));
        p.config.game().unwrap();
        // printed presets parse back to themselves
        let back = parse(&to_toml(&p.config)).unwrap();
        assert_eq!(back, p.config, "{}", p.name);
    }
}

use npga_core::learner::{es_gradient, AdamConfig, AdamState, EsConfig};
use npga_core::rng::RngState;
use proptest::prelude::*;

const THETA: [f64; 3] = [1.0, -0.5, 0.25];

// f(θ) = −‖θ‖²; its Gaussian smoothing −‖θ‖² − dσ² has gradient −2θ
fn fitness(t: &[f64]) -> npga_core::Result<f64> {
    Ok(-t.iter().map(|x| x * x).sum::<f64>())
}

/// Per-component mean and variance of `draws` ES estimates at `theta`.
fn moments(theta: &[f64], es: &EsConfig, draws: usize) -> (Vec<f64>, Vec<f64>) {
    let d = theta.len();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for k in 0..draws {
        let g = es_gradient(theta, &fitness, es, &RngState::new(1000 + k as u64)).unwrap().gradient;
        for j in 0..d {
            sum[j] += g[j];
            sq[j] += g[j] * g[j];
        }
    }
    let n = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m) * n / (n - 1.0)).collect();
    (mean, var)
}

#[test]
fn es_is_unbiased_for_the_smoothed_quadratic() {
    for baseline in [true, false] {
        let es = EsConfig {
            population: 4,
            sigma: Some(0.1),
            baseline,
            antithetic: false,
        };
        let draws = 10_000;
        let (mean, var) = moments(&THETA, &es, draws);
        for j in 0..3 {
            let se = (var[j] / draws as f64).sqrt();
            let target = -2.0 * THETA[j];
            assert!((mean[j] - target).abs() <= 3.0 * se, "baseline {baseline}, component {j}: {} vs {target} (se {se})", mean[j]);
        }
    }
}

#[test]
fn baseline_reduces_variance_away_from_the_optimum() {
    let mk = |baseline| EsConfig {
        population: 4,
        sigma: Some(0.1),
        baseline,
        antithetic: false,
    };
    let (_, on) = moments(&THETA, &mk(true), 2000);
    let (_, off) = moments(&THETA, &mk(false), 2000);
    for j in 0..3 {
        assert!(on[j] < off[j], "component {j}: {} vs {}", on[j], off[j]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn es_gradient_is_deterministic_and_finite(seed in 0u64..1000, pop in 1usize..16, antithetic in any::<bool>()) {
        let pop = if antithetic { 2 * pop } else { pop };
        let es = EsConfig { population: pop, sigma: None, baseline: true, antithetic };
        let a = es_gradient(&THETA, &fitness, &es, &RngState::new(seed)).unwrap();
        let b = es_gradient(&THETA, &fitness, &es, &RngState::new(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.gradient.iter().all(|g| g.is_finite()));
        prop_assert_eq!(a.center_fitness, fitness(&THETA).unwrap());
    }

    #[test]
    fn adam_steps_stay_bounded(g in prop::collection::vec(-1e3f64..1e3, 1..8)) {
        // each bias-corrected step is at most about lr in magnitude
        let mut s = AdamState::new(g.len(), AdamConfig::default());
        for _ in 0..5 {
            let d = s.step(&g).unwrap();
            prop_assert!(d.iter().all(|x| x.abs() <= 1e-3 * 1.0001));
        }
    }
}

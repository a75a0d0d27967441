use npga_core::auction::SettingSpec;
use npga_core::priors::{sample_valuations, PriorSpec};
use npga_core::rng::RngState;

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Two-sided Kolmogorov–Smirnov statistic against U[0, hi].
fn ks_uniform(mut xs: Vec<f64>, hi: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = x / hi;
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn mixture_correlation_equals_gamma() {
    let spec = SettingSpec::llg();
    let v = sample_valuations(&PriorSpec::correlated_llg(0.5), &spec, 1_000_000, &RngState::new(21)).unwrap();
    let a: Vec<f64> = v.rows().map(|r| r[0]).collect();
    let b: Vec<f64> = v.rows().map(|r| r[1]).collect();
    let g: Vec<f64> = v.rows().map(|r| r[2]).collect();
    assert!((pearson(&a, &b) - 0.5).abs() <= 0.01);
    assert!(pearson(&a, &g).abs() <= 0.01);
}

#[test]
fn correlated_marginals_stay_uniform() {
    let spec = SettingSpec::llg();
    // 1% critical value for n = 10⁵ is 1.628/√n
    let crit = 1.628 / (100_000f64).sqrt();
    for gamma in [0.0, 0.3, 0.5, 1.0] {
        let v = sample_valuations(&PriorSpec::correlated_llg(gamma), &spec, 100_000, &RngState::new(77)).unwrap();
        for (col, hi) in [(0, 1.0), (1, 1.0), (2, 2.0)] {
            let d = ks_uniform(v.rows().map(|r| r[col]).collect(), hi);
            assert!(d < crit, "gamma {gamma} column {col}: D = {d}");
        }
    }
}

#[test]
fn sampling_ignores_worker_count() {
    let spec = SettingSpec::llllgg();
    let prior = PriorSpec::local_global(&spec);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| sample_valuations(&prior, &spec, 4096, &RngState::new(5)).unwrap());
    let b = three.install(|| sample_valuations(&prior, &spec, 4096, &RngState::new(5)).unwrap());
    assert_eq!(a, b);
}

#[test]
fn prior_round_trips_through_json() {
    for text in [
        r#"{"family":"uniform","lo":0.0,"hi":10.0}"#,
        r#"{"family":"uniform","lo":0.0,"hi":[1.0,1.0,2.0]}"#,
        r#"{"family":"gaussian","mean":15.0,"stddev":10.0}"#,
        r#"{"family":"correlated_uniform_llg","local_hi":1.0,"global_hi":2.0,"gamma":0.5}"#,
    ] {
        let p: PriorSpec = serde_json::from_str(text).unwrap();
        let back: PriorSpec = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
    }
    assert!(serde_json::from_str::<PriorSpec>(r#"{"family":"gaussian","mean":1.0,"stddev":1.0,"skew":2}"#).is_err());
}

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsConfig {
    pub population: usize,
    /// Perturbation scale; `None` means `1/√d`.
    pub sigma: Option<f64>,
    /// Subtract the unperturbed fitness from every perturbation's fitness.
    pub baseline: bool,
    /// Draw perturbations in mirrored pairs `±ε`.
    pub antithetic: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            population: 64,
            sigma: None,
            baseline: true,
            antithetic: false,
        }
    }
}

impl EsConfig {
    pub fn sigma_for(&self, dim: usize) -> f64 {
        self.sigma.unwrap_or(1.0 / (dim as f64).sqrt())
    }

    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.population == 0 {
            out.push(format!("{prefix}.population must be at least 1"));
        }
        if self.antithetic && self.population % 2 == 1 {
            out.push(format!("{prefix}.population must be even with antithetic sampling"));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                out.push(format!("{prefix}.sigma must be positive, got {s}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsEstimate {
    pub gradient: Vec<f64>,
    /// Fitness of the unperturbed parameters.
    pub center_fitness: f64,
}

/// Perturbation `p` (already scaled by `sigma`).
pub fn es_noise(es: &EsConfig, sigma: f64, dim: usize, p: usize, rng: &RngState) -> Vec<f64> {
    let (index, sign) = if es.antithetic { (p / 2, if p % 2 == 0 { 1.0 } else { -1.0 }) } else { (p, 1.0) };
    let mut r = rng.sample_rng(index as u64);
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            sign * sigma * z
        })
        .collect()
}

/// `(1/(σ²P)) Σ_p (φ_p − φ₀) ε_p`, with `φ₀ = 0` when `baseline` is `None`.
pub fn es_combine(noise: &[Vec<f64>], fitness: &[f64], baseline: Option<f64>, sigma: f64) -> Vec<f64> {
    let dim = noise.first().map_or(0, |e| e.len());
    let scale = 1.0 / (sigma * sigma * noise.len() as f64);
    let b = baseline.unwrap_or(0.0);
    let mut grad = vec![0.0; dim];
    for (eps, &phi) in noise.iter().zip(fitness) {
        let w = (phi - b) * scale;
        for (g, e) in grad.iter_mut().zip(eps) {
            *g += w * e;
        }
    }
    grad
}

/// ES pseudogradient of `fitness` at `theta`. Perturbations are evaluated in
/// parallel and combined in index order.
pub fn es_gradient<F>(theta: &[f64], fitness: &F, es: &EsConfig, rng: &RngState) -> Result<EsEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let problems = es.problems("es");
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    let dim = theta.len();
    let sigma = es.sigma_for(dim);
    let noise: Vec<Vec<f64>> = (0..es.population).map(|p| es_noise(es, sigma, dim, p, rng)).collect();
    let center_fitness = fitness(theta)?;
    let phis: Vec<f64> = noise
        .par_iter()
        .map(|eps| {
            let perturbed: Vec<f64> = theta.iter().zip(eps).map(|(t, e)| t + e).collect();
            fitness(&perturbed)
        })
        .collect::<Result<_>>()?;
    if phis.iter().any(|f| !f.is_finite()) || !center_fitness.is_finite() {
        return Err(Error::NonFinite("fitness"));
    }
    let baseline = es.baseline.then_some(center_fitness);
    Ok(EsEstimate {
        gradient: es_combine(&noise, &phis, baseline, sigma),
        center_fitness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_formula() {
        let g = es_combine(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[2.0, -1.0], None, 1.0);
        assert_eq!(g, vec![1.0, -0.5]);
    }

    #[test]
    fn constant_fitness_with_baseline_is_zero() {
        let es = EsConfig { population: 16, ..EsConfig::default() };
        let est = es_gradient(&[0.5; 5], &|_: &[f64]| Ok(3.0), &es, &RngState::new(1)).unwrap();
        assert!(est.gradient.iter().all(|&g| g == 0.0));
        assert_eq!(est.center_fitness, 3.0);
    }

    #[test]
    fn antithetic_pairs_mirror() {
        let es = EsConfig { population: 4, antithetic: true, ..EsConfig::default() };
        let rng = RngState::new(2);
        let a = es_noise(&es, 0.5, 3, 2, &rng);
        let b = es_noise(&es, 0.5, 3, 3, &rng);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn worker_count_does_not_matter() {
        let es = EsConfig::default();
        let f = |t: &[f64]| Ok(-t.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>());
        let theta = vec![0.2; 9];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| es_gradient(&theta, &f, &es, &RngState::new(4)).unwrap());
        let b = three.install(|| es_gradient(&theta, &f, &es, &RngState::new(4)).unwrap());
        assert_eq!(a, b);
    }
}

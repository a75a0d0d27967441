//! Valuation priors and reproducible batch sampling.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::auction::{SettingKind, SettingSpec, ValuationBatch};
use crate::error::{Error, Result};
use crate::rng::{RngState, SampleRng};

/// One value shared by all bidders, or one per bidder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerBidder {
    Same(f64),
    Each(Vec<f64>),
}

impl PerBidder {
    pub fn get(&self, bidder: usize) -> f64 {
        match self {
            PerBidder::Same(x) => *x,
            PerBidder::Each(xs) => xs[bidder],
        }
    }

    fn check_len(&self, n: usize, field: &str, problems: &mut Vec<String>) {
        if let PerBidder::Each(xs) = self {
            if xs.len() != n {
                problems.push(format!("prior.{field}: {} entries for {n} bidders", xs.len()));
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PerBidder::Same(x) => vec![*x],
            PerBidder::Each(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Independent `U[lo_i, hi_i]` on every bundle of bidder `i`.
    Uniform { lo: PerBidder, hi: PerBidder },
    /// Independent `N(mean, stddev²)` draws, negative draws clipped to 0.
    Gaussian { mean: f64, stddev: f64 },
    /// LLG locals on `U[0, local_hi]`, sharing one draw with probability
    /// `gamma`; the global bidder independent on `U[0, global_hi]`.
    CorrelatedUniformLlg { local_hi: f64, global_hi: f64, gamma: f64 },
}

impl PriorSpec {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        PriorSpec::Uniform {
            lo: PerBidder::Same(lo),
            hi: PerBidder::Same(hi),
        }
    }

    /// The local-global prior `U[0,1]` for locals and `U[0,2]` for globals.
    /// Globals are the bidders whose bundles are the largest in the setting.
    pub fn local_global(spec: &SettingSpec) -> Self {
        let size = |i: usize| spec.bundles(i).iter().map(|b| b.count_ones()).max().unwrap_or(0);
        let largest = (0..spec.n_bidders()).map(size).max().unwrap_or(0);
        let smallest = (0..spec.n_bidders()).map(size).min().unwrap_or(0);
        let hi = (0..spec.n_bidders())
            .map(|i| if size(i) == largest && largest > smallest { 2.0 } else { 1.0 })
            .collect();
        PriorSpec::Uniform {
            lo: PerBidder::Same(0.0),
            hi: PerBidder::Each(hi),
        }
    }

    pub fn correlated_llg(gamma: f64) -> Self {
        PriorSpec::CorrelatedUniformLlg {
            local_hi: 1.0,
            global_hi: 2.0,
            gamma,
        }
    }

    /// All problems with this prior for `spec`, empty if it is usable.
    pub fn problems(&self, spec: &SettingSpec) -> Vec<String> {
        let mut out = Vec::new();
        let n = spec.n_bidders();
        match self {
            PriorSpec::Uniform { lo, hi } => {
                lo.check_len(n, "lo", &mut out);
                hi.check_len(n, "hi", &mut out);
                if out.is_empty() {
                    for i in 0..n {
                        let (l, h) = (lo.get(i), hi.get(i));
                        if !(l.is_finite() && h.is_finite() && l >= 0.0 && h > l) {
                            out.push(format!("prior: bidder {i} needs 0 <= lo < hi, got lo = {l}, hi = {h}"));
                        }
                    }
                }
                if lo.values().iter().chain(hi.values().iter()).any(|x| x.is_nan()) {
                    out.push("prior: NaN bound".into());
                }
            }
            PriorSpec::Gaussian { mean, stddev } => {
                if !mean.is_finite() {
                    out.push(format!("prior.mean must be finite, got {mean}"));
                }
                if !(stddev.is_finite() && *stddev > 0.0) {
                    out.push(format!("prior.stddev must be positive, got {stddev}"));
                }
            }
            PriorSpec::CorrelatedUniformLlg {
                local_hi,
                global_hi,
                gamma,
            } => {
                if spec.kind() != SettingKind::Llg {
                    out.push("prior: correlated_uniform_llg needs the llg setting".into());
                }
                if !(*local_hi > 0.0 && local_hi.is_finite()) {
                    out.push(format!("prior.local_hi must be positive, got {local_hi}"));
                }
                if !(*global_hi > 0.0 && global_hi.is_finite()) {
                    out.push(format!("prior.global_hi must be positive, got {global_hi}"));
                }
                if !(0.0..=1.0).contains(gamma) {
                    out.push(format!("prior.gamma must lie in [0, 1], got {gamma}"));
                }
            }
        }
        out
    }

    pub fn validate(&self, spec: &SettingSpec) -> Result<()> {
        let problems = self.problems(spec);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn is_independent(&self) -> bool {
        !matches!(self, PriorSpec::CorrelatedUniformLlg { gamma, .. } if *gamma > 0.0)
    }

    /// True when every bidder's marginal is the same distribution.
    pub fn is_symmetric(&self) -> bool {
        match self {
            PriorSpec::Uniform { lo, hi } => {
                let same = |p: &PerBidder| p.values().windows(2).all(|w| w[0] == w[1]);
                same(lo) && same(hi)
            }
            PriorSpec::Gaussian { .. } => true,
            PriorSpec::CorrelatedUniformLlg { .. } => false,
        }
    }

    /// Typical upper end of bidder `i`'s values: `hi` for uniform priors,
    /// `mean + 3·stddev` for Gaussian ones. Sets the best-response grid box
    /// and the scale of pretraining thresholds.
    pub fn upper(&self, bidder: usize, spec: &SettingSpec) -> f64 {
        match self {
            PriorSpec::Uniform { hi, .. } => hi.get(bidder),
            PriorSpec::Gaussian { mean, stddev } => (mean + 3.0 * stddev).max(0.0),
            PriorSpec::CorrelatedUniformLlg {
                local_hi, global_hi, ..
            } => {
                if spec.n_bidders() == 3 && bidder == 2 {
                    *global_hi
                } else {
                    *local_hi
                }
            }
        }
    }

    /// Marginal CDF of one valuation entry of `bidder`.
    pub fn marginal_cdf(&self, bidder: usize, spec: &SettingSpec, x: f64) -> f64 {
        let uniform = |lo: f64, hi: f64| ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        match self {
            PriorSpec::Uniform { lo, hi } => uniform(lo.get(bidder), hi.get(bidder)),
            PriorSpec::Gaussian { mean, stddev } => {
                if x < 0.0 {
                    0.0
                } else {
                    StatNormal::new(*mean, *stddev).map(|d| d.cdf(x)).unwrap_or(f64::NAN)
                }
            }
            PriorSpec::CorrelatedUniformLlg { .. } => uniform(0.0, self.upper(bidder, spec)),
        }
    }
}

fn fill_row(prior: &PriorSpec, spec: &SettingSpec, r: &mut SampleRng, row: &mut [f64]) {
    match prior {
        PriorSpec::Uniform { lo, hi } => {
            for i in 0..spec.n_bidders() {
                let (l, h) = (lo.get(i), hi.get(i));
                for s in spec.slot_range(i) {
                    row[s] = l + (h - l) * r.uniform();
                }
            }
        }
        PriorSpec::Gaussian { mean, stddev } => {
            let normal = Normal::new(*mean, *stddev).expect("validated stddev");
            for v in row.iter_mut() {
                *v = normal.sample(r).max(0.0);
            }
        }
        PriorSpec::CorrelatedUniformLlg {
            local_hi,
            global_hi,
            gamma,
        } => {
            let shared = r.uniform() < *gamma;
            let common = r.uniform();
            let (u1, u2) = (r.uniform(), r.uniform());
            let (a, b) = if shared { (common, common) } else { (u1, u2) };
            row[0] = local_hi * a;
            row[1] = local_hi * b;
            row[2] = global_hi * r.uniform();
        }
    }
}

/// Draws `batch` valuation profiles. Row `h` depends only on `(rng, h)`, so
/// any partition of the rows across workers gives the same batch.
pub fn sample_valuations(prior: &PriorSpec, spec: &SettingSpec, batch: usize, rng: &RngState) -> Result<ValuationBatch> {
    prior.validate(spec)?;
    let width = spec.n_slots();
    let mut out = ValuationBatch::zeros(batch, width);
    out.as_mut_slice()
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(h, row)| fill_row(prior, spec, &mut rng.sample_rng(h as u64), row));
    Ok(out)
}

/// Pretraining targets: the truthful strategy maps valuations to equal bids.
pub fn truthful_targets(valuations: &ValuationBatch) -> ValuationBatch {
    valuations.clone()
}

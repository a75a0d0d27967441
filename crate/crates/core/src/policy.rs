//! Bidder strategies as small fully connected networks over a flat parameter
//! vector, plus supervised pretraining towards truthful bidding.

use std::io::{BufRead, Write};

use log::warn;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::auction::SettingSpec;
use crate::error::{Error, Result};
use crate::learner::{es_gradient, AdamConfig, AdamState, EsConfig};
use crate::priors::{sample_valuations, PriorSpec};
use crate::rng::{tags, RngState};

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

/// `input → hidden… → output`, SELU on hidden layers and ReLU on the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![10, 10]
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::Shape("layer widths must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
        })
    }

    /// Default network for a bidder of `spec`: one input and one output per
    /// bundle, two hidden layers of 10.
    pub fn for_bidder(spec: &SettingSpec, bidder: usize) -> Self {
        let k = spec.bundle_count(bidder);
        Self {
            input_dim: k,
            hidden: default_hidden(),
            output_dim: k,
        }
    }

    fn width(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim
        } else if k <= self.hidden.len() {
            self.hidden[k - 1]
        } else {
            self.output_dim
        }
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.hidden.len()).map(move |l| (self.width(l), self.width(l + 1)))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(i, o)| (i + 1) * o).sum()
    }

    fn max_width(&self) -> usize {
        self.hidden.iter().copied().chain([self.input_dim, self.output_dim]).max().unwrap()
    }

    /// Forward pass for one input. Weights are stored per layer as a
    /// row-major `out × in` block followed by `out` biases.
    pub fn forward_one(&self, theta: &[f64], input: &[f64], output: &mut [f64]) {
        const STACK: usize = 32;
        let w = self.max_width();
        if w <= STACK {
            let (mut a, mut b) = ([0.0; STACK], [0.0; STACK]);
            self.forward_with(theta, input, output, &mut a, &mut b);
        } else {
            let (mut a, mut b) = (vec![0.0; w], vec![0.0; w]);
            self.forward_with(theta, input, output, &mut a, &mut b);
        }
    }

    fn forward_with(&self, theta: &[f64], input: &[f64], output: &mut [f64], a: &mut [f64], b: &mut [f64]) {
        a[..input.len()].copy_from_slice(input);
        let n_layers = self.hidden.len() + 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.width(l), self.width(l + 1));
            let weights = &theta[off..off + fan_in * fan_out];
            let bias = &theta[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
            off += (fan_in + 1) * fan_out;
            let last = l + 1 == n_layers;
            let x = &a[..fan_in];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let z = bias[o] + row.iter().zip(x).fold(0.0, |acc, (w, x)| acc + w * x);
                b[o] = if last { z.max(0.0) } else { selu(z) };
            }
            a[..fan_out].copy_from_slice(&b[..fan_out]);
        }
        output.copy_from_slice(&a[..self.output_dim]);
    }

    /// Row-wise forward pass over a flat batch (`input_dim` values per row).
    /// Gives the same bits as [`forward_one`](Self::forward_one) per row.
    pub fn forward(&self, theta: &[f64], inputs: &[f64], outputs: &mut [f64]) -> Result<()> {
        self.check_theta(theta)?;
        if inputs.len() % self.input_dim != 0 || outputs.len() / self.output_dim != inputs.len() / self.input_dim {
            return Err(Error::Shape(format!(
                "forward: {} inputs and {} outputs do not match widths {} → {}",
                inputs.len(),
                outputs.len(),
                self.input_dim,
                self.output_dim
            )));
        }
        self.forward_unchecked(theta, inputs, outputs);
        Ok(())
    }

    /// [`forward`](Self::forward) without shape checks, processed in blocks
    /// of rows so the per-unit sums run across rows.
    pub fn forward_unchecked(&self, theta: &[f64], inputs: &[f64], outputs: &mut [f64]) {
        const BLOCK: usize = 64;
        let w = self.max_width();
        // activations stored unit-major: a[unit * BLOCK + row]
        let mut a = vec![0.0; w * BLOCK];
        let mut b = vec![0.0; w * BLOCK];
        let n_layers = self.hidden.len() + 1;
        for (x, y) in inputs.chunks(self.input_dim * BLOCK).zip(outputs.chunks_mut(self.output_dim * BLOCK)) {
            let rows = x.len() / self.input_dim;
            for r in 0..rows {
                for k in 0..self.input_dim {
                    a[k * BLOCK + r] = x[r * self.input_dim + k];
                }
            }
            let mut off = 0;
            for l in 0..n_layers {
                let (fan_in, fan_out) = (self.width(l), self.width(l + 1));
                let weights = &theta[off..off + fan_in * fan_out];
                let bias = &theta[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
                off += (fan_in + 1) * fan_out;
                let last = l + 1 == n_layers;
                for o in 0..fan_out {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    let out = &mut b[o * BLOCK..o * BLOCK + rows];
                    out.fill(0.0);
                    // same summation order as forward_with: Σ_k w_k x_k, then + bias
                    for (k, &wk) in row.iter().enumerate() {
                        let xin = &a[k * BLOCK..k * BLOCK + rows];
                        for (z, &xv) in out.iter_mut().zip(xin) {
                            *z += wk * xv;
                        }
                    }
                    for z in out.iter_mut() {
                        let v = bias[o] + *z;
                        *z = if last { v.max(0.0) } else { selu(v) };
                    }
                }
                std::mem::swap(&mut a, &mut b);
            }
            for r in 0..rows {
                for k in 0..self.output_dim {
                    y[r * self.output_dim + k] = a[k * BLOCK + r];
                }
            }
        }
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                theta.len(),
                self.param_count()
            )));
        }
        Ok(())
    }

    /// Splits a flat vector into per-layer `(weights, biases)`.
    pub fn unflatten(&self, theta: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        self.check_theta(theta)?;
        let mut off = 0;
        Ok(self
            .layers()
            .map(|(i, o)| {
                let w = theta[off..off + i * o].to_vec();
                let b = theta[off + i * o..off + (i + 1) * o].to_vec();
                off += (i + 1) * o;
                (w, b)
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
        let mut theta = Vec::with_capacity(self.param_count());
        for ((w, b), (i, o)) in layers.iter().zip(self.layers()) {
            if w.len() != i * o || b.len() != o {
                return Err(Error::Shape("layer block size mismatch".into()));
            }
            theta.extend_from_slice(w);
            theta.extend_from_slice(b);
        }
        self.check_theta(&theta)?;
        Ok(theta)
    }

    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// with `n` inputs is drawn from `U(−1/√n, 1/√n)`.
    pub fn init_params(&self, rng: &RngState) -> StrategyParams {
        let mut r = rng.sample_rng(0);
        let mut theta = Vec::with_capacity(self.param_count());
        for (i, o) in self.layers() {
            let bound = 1.0 / (i as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            theta.extend((0..(i + 1) * o).map(|_| dist.sample(&mut r)));
        }
        StrategyParams {
            arch: self.clone(),
            theta,
        }
    }
}

/// One bidder's strategy: architecture plus flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

impl StrategyParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.check_theta(&theta)?;
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("strategy parameters"));
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let theta = vec![0.0; arch.param_count()];
        Self { arch, theta }
    }

    pub fn forward(&self, inputs: &[f64], outputs: &mut [f64]) -> Result<()> {
        self.arch.forward(&self.theta, inputs, outputs)
    }

    pub fn bid(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.arch.output_dim];
        self.arch.forward_one(&self.theta, input, &mut out);
        out
    }
}

const CHECKPOINT_MAGIC: &str = "npga-checkpoint 1";

/// Writes strategies as text: a header line, then per bidder its
/// architecture line followed by one parameter per line.
pub fn write_checkpoint<W: Write>(mut w: W, strategies: &[StrategyParams]) -> Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "bidders {}", strategies.len())?;
    for s in strategies {
        let hidden: Vec<String> = s.arch.hidden.iter().map(|h| h.to_string()).collect();
        writeln!(
            w,
            "bidder input {} hidden [{}] output {} params {}",
            s.arch.input_dim,
            hidden.join(","),
            s.arch.output_dim,
            s.theta.len()
        )?;
        for x in &s.theta {
            // Display prints the shortest string that parses back to the same f64
            writeln!(w, "{x}")?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Vec<StrategyParams>> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = r.lines();
    let mut next = |what: &str| -> Result<String> {
        match lines.next() {
            Some(l) => Ok(l?.trim().to_string()),
            None => Err(bad(format!("unexpected end of file, expected {what}"))),
        }
    };
    if next("header")? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let count_line = next("bidder count")?;
    let n: usize = count_line
        .strip_prefix("bidders ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad bidder count line {count_line:?}")))?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let line = next("architecture line")?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let parse_err = || bad(format!("bidder {i}: bad architecture line {line:?}"));
        if f.len() != 9 || f[0] != "bidder" || f[1] != "input" || f[3] != "hidden" || f[5] != "output" || f[7] != "params" {
            return Err(parse_err());
        }
        let input: usize = f[2].parse().map_err(|_| parse_err())?;
        let inner = f[4].trim_start_matches('[').trim_end_matches(']');
        let hidden: Vec<usize> = if inner.is_empty() {
            Vec::new()
        } else {
            inner.split(',').map(|h| h.parse()).collect::<std::result::Result<_, _>>().map_err(|_| parse_err())?
        };
        let output: usize = f[6].parse().map_err(|_| parse_err())?;
        let count: usize = f[8].parse().map_err(|_| parse_err())?;
        let arch = Architecture::new(input, hidden, output)?;
        let mut theta = Vec::with_capacity(count);
        for _ in 0..count {
            let v = next("parameter")?;
            theta.push(v.parse::<f64>().map_err(|_| bad(format!("bidder {i}: bad parameter {v:?}")))?);
        }
        out.push(StrategyParams::new(arch, theta).map_err(|e| bad(format!("bidder {i}: {e}")))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub batch: usize,
    /// Stop once the RMSE to truthful bids falls below this fraction of the
    /// prior's value scale.
    pub rmse_fraction: f64,
    pub lr: f64,
    pub population: usize,
    pub max_retries: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            batch: 1 << 10,
            rmse_fraction: 0.1,
            lr: 1e-2,
            population: 64,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub params: StrategyParams,
    pub rmse: f64,
    pub iterations: usize,
    pub reached_threshold: bool,
    pub retries: usize,
}

/// RMSE between the strategy's bids and `targets` over flat batches.
fn truthful_rmse(arch: &Architecture, theta: &[f64], inputs: &[f64], out: &mut [f64]) -> f64 {
    arch.forward(theta, inputs, out).expect("shapes fixed by caller");
    let se: f64 = out.iter().zip(inputs).map(|(b, v)| (b - v).powi(2)).sum();
    (se / inputs.len() as f64).sqrt()
}

fn bidder_columns(spec: &SettingSpec, bidder: usize, values: &crate::auction::ValuationBatch) -> Vec<f64> {
    let range = spec.slot_range(bidder);
    values.rows().flat_map(|r| r[range.clone()].iter().copied()).collect()
}

/// Fits `start` to the truthful strategy `β(v) = v` for `bidder` with the ES
/// estimator and Adam on fresh valuation batches. If the fitted network is
/// (nearly) constant zero it is reinitialized and retrained.
pub fn pretrain_truthful(
    start: &StrategyParams,
    prior: &PriorSpec,
    spec: &SettingSpec,
    bidder: usize,
    cfg: &PretrainConfig,
    rng: &RngState,
) -> Result<PretrainOutcome> {
    let arch = &start.arch;
    if arch.input_dim != spec.bundle_count(bidder) || arch.output_dim != spec.bundle_count(bidder) {
        return Err(Error::Shape(format!(
            "bidder {bidder} has {} bundles but the network maps {} → {}",
            spec.bundle_count(bidder),
            arch.input_dim,
            arch.output_dim
        )));
    }
    let scale = prior.upper(bidder, spec);
    let threshold = cfg.rmse_fraction * scale;
    let mut params = start.clone();
    let mut retries = 0;
    loop {
        let attempt = fit_truthful(&params, prior, spec, bidder, cfg, threshold, &rng.substream(retries as u64))?;
        let probe = sample_valuations(prior, spec, cfg.batch, &rng.path(&[tags::PRETRAIN, 1 << 20, retries as u64]))?;
        let inputs = bidder_columns(spec, bidder, &probe);
        let mut out = vec![0.0; inputs.len()];
        arch.forward(&attempt.params.theta, &inputs, &mut out)?;
        let mean_bid = out.iter().sum::<f64>() / out.len() as f64;
        if mean_bid >= 1e-3 * scale || retries >= cfg.max_retries {
            if mean_bid < 1e-3 * scale {
                warn!("bidder {bidder}: pretrained strategy still bids about zero after {retries} retries");
            }
            if !attempt.reached_threshold {
                warn!(
                    "bidder {bidder}: pretraining stopped at RMSE {:.4} above the target {threshold:.4}",
                    attempt.rmse
                );
            }
            return Ok(PretrainOutcome { retries, ..attempt });
        }
        retries += 1;
        params = arch.init_params(&rng.path(&[tags::INIT, 1 << 20, retries as u64]));
    }
}

fn fit_truthful(
    start: &StrategyParams,
    prior: &PriorSpec,
    spec: &SettingSpec,
    bidder: usize,
    cfg: &PretrainConfig,
    threshold: f64,
    rng: &RngState,
) -> Result<PretrainOutcome> {
    let arch = &start.arch;
    let es = EsConfig {
        population: cfg.population,
        ..EsConfig::default()
    };
    let mut adam = AdamState::new(
        arch.param_count(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut theta = start.theta.clone();
    let mut rmse = f64::INFINITY;
    for it in 0..cfg.iterations {
        let values = sample_valuations(prior, spec, cfg.batch, &rng.path(&[tags::PRETRAIN, it as u64]))?;
        let inputs = bidder_columns(spec, bidder, &values);
        let mut buf = vec![0.0; inputs.len()];
        rmse = truthful_rmse(arch, &theta, &inputs, &mut buf);
        if rmse <= threshold {
            return Ok(PretrainOutcome {
                params: StrategyParams::new(arch.clone(), theta)?,
                rmse,
                iterations: it,
                reached_threshold: true,
                retries: 0,
            });
        }
        let fitness = |t: &[f64]| -> Result<f64> {
            let mut out = vec![0.0; inputs.len()];
            Ok(-truthful_rmse(arch, t, &inputs, &mut out).powi(2))
        };
        let est = es_gradient(&theta, &fitness, &es, &rng.path(&[tags::ES_NOISE, it as u64]))?;
        let delta = adam.step(&est.gradient).map_err(|e| e.at_iteration(it))?;
        for (t, d) in theta.iter_mut().zip(&delta) {
            *t += d;
        }
    }
    let values = sample_valuations(prior, spec, cfg.batch, &rng.path(&[tags::PRETRAIN, cfg.iterations as u64]))?;
    let inputs = bidder_columns(spec, bidder, &values);
    let mut buf = vec![0.0; inputs.len()];
    if cfg.iterations > 0 {
        rmse = truthful_rmse(arch, &theta, &inputs, &mut buf);
    }
    Ok(PretrainOutcome {
        params: StrategyParams::new(arch.clone(), theta)?,
        rmse,
        iterations: cfg.iterations,
        reached_threshold: rmse <= threshold,
        retries: 0,
    })
}

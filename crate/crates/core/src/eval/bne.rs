//! Known Bayes-Nash equilibria used as reference strategies.

use std::sync::Mutex;

use crate::auction::{PaymentRule, SettingKind, UtilityModel};
use crate::core_pricing::{llg_core_closed_form, CoreReference};
use crate::error::{Error, Result};
use crate::game::{Game, Strategy};
use crate::priors::PriorSpec;

/// Points in a tabulated bid function.
pub const TABLE_POINTS: usize = 2048;

/// A scalar bid function applied to each bundle value.
#[derive(Debug, Clone, PartialEq)]
pub enum BidFunction {
    Truthful,
    Linear(f64),
    /// Values on an even grid over `[0, hi]`, interpolated linearly and held
    /// constant past `hi`.
    Table { hi: f64, values: Vec<f64> },
    LlgLocal { rule: PaymentRule, gamma: f64 },
}

impl BidFunction {
    pub fn bid(&self, v: f64) -> f64 {
        match self {
            BidFunction::Truthful => v,
            BidFunction::Linear(c) => c * v,
            BidFunction::Table { hi, values } => {
                let n = values.len() - 1;
                let x = (v.max(0.0) / hi) * n as f64;
                if x >= n as f64 {
                    return values[n];
                }
                let k = x.floor() as usize;
                let t = x - k as f64;
                values[k] * (1.0 - t) + values[k + 1] * t
            }
            BidFunction::LlgLocal { rule, gamma } => llg_local_bid(*rule, *gamma, v),
        }
    }
}

impl Strategy for BidFunction {
    fn bid_into(&self, values: &[f64], bids: &mut [f64]) {
        for (b, &v) in bids.iter_mut().zip(values) {
            *b = self.bid(v);
        }
    }
}

/// Equilibrium strategy per bidder.
#[derive(Debug, Clone, PartialEq)]
pub struct BneOracle {
    pub bidders: Vec<BidFunction>,
}

impl BneOracle {
    pub fn strategy_refs(&self) -> Vec<&dyn Strategy> {
        self.bidders.iter().map(|b| b as &dyn Strategy).collect()
    }
}

/// Local bidder equilibrium bid in LLG with locals on `U[0,1]`, the global
/// bidder on `U[0,2]` bidding truthfully, and local correlation `gamma`.
pub fn llg_local_bid(rule: PaymentRule, gamma: f64, v: f64) -> f64 {
    let v = v.max(0.0);
    let c = 1.0 - gamma;
    let b = match rule {
        PaymentRule::NearestVcg => {
            // threshold (3 − √(9 − c²))/c tends to 0 as c → 0
            let threshold = if c < 1e-6 { c / 6.0 } else { (3.0 - (9.0 - c * c).sqrt()) / c };
            2.0 / (2.0 + gamma) * (v - threshold).max(0.0)
        }
        PaymentRule::NearestBid => {
            if c < 1e-6 {
                v / 2.0
            } else {
                (2f64.ln() - (2.0 - c * v).ln()) / c
            }
        }
        PaymentRule::NearestZero => {
            if c < 1e-6 {
                v
            } else if gamma + c * v <= 0.0 {
                0.0
            } else {
                (1.0 + (gamma + c * v).ln() / c).max(0.0)
            }
        }
        PaymentRule::Vcg => v,
        _ => f64::NAN,
    };
    b.max(0.0)
}

/// Tabulates `β(v) = v − ∫₀ᵛ F(x)^{n−1} dx / F(v)^{n−1}` on `[0, hi]`.
pub fn fpsb_quadrature<F: Fn(f64) -> f64>(cdf: F, hi: f64, n: usize) -> Result<BidFunction> {
    const SUB: usize = 8;
    let k = (n - 1) as i32;
    let g = |x: f64| cdf(x).powi(k);
    let step = hi / (TABLE_POINTS - 1) as f64;
    let mut values = Vec::with_capacity(TABLE_POINTS);
    let mut integral = 0.0;
    for j in 0..TABLE_POINTS {
        let x = j as f64 * step;
        if j > 0 {
            // composite Simpson on the last cell
            let a = x - step;
            let h = step / SUB as f64;
            let mut s = g(a) + g(x);
            for m in 1..SUB {
                s += if m % 2 == 1 { 4.0 } else { 2.0 } * g(a + m as f64 * h);
            }
            integral += s * h / 3.0;
        }
        let fx = g(x);
        let b = if fx > 0.0 { x - integral / fx } else { x };
        if !b.is_finite() {
            return Err(Error::OracleValidation(format!("quadrature produced {b} at v = {x}")));
        }
        values.push(b.max(0.0));
    }
    Ok(BidFunction::Table { hi, values })
}

/// Symmetric first-price equilibrium for `n` bidders with i.i.d. values.
pub fn bne_fpsb_symmetric(prior: &PriorSpec, n: usize, model: UtilityModel) -> Result<BneOracle> {
    if n < 2 {
        return Err(Error::Unsupported("first-price equilibrium needs at least two bidders".into()));
    }
    let rho = model.risk_rho;
    let f = match prior {
        PriorSpec::Uniform { lo, .. } if prior.is_symmetric() && lo.get(0) == 0.0 => {
            BidFunction::Linear((n - 1) as f64 / (n as f64 - 1.0 + rho))
        }
        _ if rho != 1.0 => {
            return Err(Error::Unsupported("risk-averse first-price equilibrium is only tabulated for U[0, hi] priors".into()))
        }
        PriorSpec::Uniform { hi, .. } if prior.is_symmetric() => {
            let top = hi.get(0);
            let spec_free = prior.clone();
            fpsb_quadrature(move |x| marginal_cdf_free(&spec_free, x), top, n)?
        }
        PriorSpec::Gaussian { mean, stddev } => {
            let top = (mean + 6.0 * stddev).max(1.0);
            let p = prior.clone();
            fpsb_quadrature(move |x| marginal_cdf_free(&p, x), top, n)?
        }
        _ => return Err(Error::Unsupported("first-price equilibrium needs a symmetric independent prior".into())),
    };
    Ok(BneOracle { bidders: vec![f; n] })
}

/// Marginal CDF of a symmetric prior that does not depend on the setting.
fn marginal_cdf_free(prior: &PriorSpec, x: f64) -> f64 {
    match prior {
        PriorSpec::Uniform { lo, hi } => ((x - lo.get(0)) / (hi.get(0) - lo.get(0))).clamp(0.0, 1.0),
        PriorSpec::Gaussian { mean, stddev } => {
            use statrs::distribution::{ContinuousCDF, Normal};
            if x < 0.0 {
                0.0
            } else {
                Normal::new(*mean, *stddev).map(|d| d.cdf(x)).unwrap_or(f64::NAN)
            }
        }
        PriorSpec::CorrelatedUniformLlg { .. } => f64::NAN,
    }
}

/// Largest ex-interim gain a local bidder can get over the equilibrium bid,
/// across an even grid of `n_values` values, with deterministic quadrature
/// over the opponents' values.
pub fn llg_best_response_loss(rule: PaymentRule, gamma: f64, n_values: usize) -> f64 {
    match rule.core_reference() {
        Some(reference) => llg_best_response_loss_of(|v| llg_local_bid(rule, gamma, v), reference, gamma, n_values),
        None => f64::NAN,
    }
}

/// [`llg_best_response_loss`] for an arbitrary symmetric local strategy.
pub fn llg_best_response_loss_of<B: Fn(f64) -> f64>(beta: B, reference: CoreReference, gamma: f64, n_values: usize) -> f64 {
    const OTHER_NODES: usize = 64;
    const GLOBAL_INTERVALS: usize = 32;
    const BID_POINTS: usize = 129;

    let utility = |v: f64, b: f64| -> f64 {
        // other local: with probability gamma the same value, else uniform
        let mut nodes: Vec<(f64, f64)> = (0..OTHER_NODES)
            .map(|k| ((k as f64 + 0.5) / OTHER_NODES as f64, (1.0 - gamma) / OTHER_NODES as f64))
            .collect();
        if gamma > 0.0 {
            nodes.push((v, gamma));
        }
        let mut total = 0.0;
        for (v2, w) in nodes {
            let b2 = beta(v2);
            // locals win when the global bid (= its value, on U[0,2]) is below b + b2
            let top = (b + b2).min(2.0);
            if top <= 0.0 {
                continue;
            }
            let h = top / GLOBAL_INTERVALS as f64;
            let payoff = |g: f64| v - llg_pay(b, b2, g, reference);
            let mut s = payoff(0.0) + payoff(top);
            for m in 1..GLOBAL_INTERVALS {
                s += if m % 2 == 1 { 4.0 } else { 2.0 } * payoff(m as f64 * h);
            }
            total += w * s * h / 3.0 / 2.0;
        }
        total
    };

    (0..n_values)
        .map(|k| {
            let v = (k as f64 + 0.5) / n_values as f64;
            let at_bne = utility(v, beta(v));
            let best = (0..BID_POINTS)
                .map(|j| utility(v, j as f64 / (BID_POINTS - 1) as f64))
                .fold(f64::NEG_INFINITY, f64::max);
            best - at_bne
        })
        .fold(0.0, f64::max)
}

fn llg_pay(b1: f64, b2: f64, g: f64, reference: CoreReference) -> f64 {
    llg_core_closed_form([b1, b2, g], reference)[0]
}

pub const LLG_ORACLE_TOLERANCE: f64 = 2e-3;

static LLG_CHECKED: Mutex<Vec<(PaymentRule, u64, f64)>> = Mutex::new(Vec::new());

/// LLG equilibrium for a core-selecting rule: the global bidder is truthful,
/// locals follow [`llg_local_bid`]. The local formula is checked against a
/// best-response grid the first time each `(rule, gamma)` is requested.
pub fn bne_llg(rule: PaymentRule, gamma: f64) -> Result<BneOracle> {
    if rule.core_reference().is_none() {
        return Err(Error::Unsupported(format!("no known LLG equilibrium for {rule}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(vec![format!("gamma = {gamma} outside [0, 1]")]));
    }
    let key = (rule, gamma.to_bits());
    let cached = LLG_CHECKED
        .lock()
        .unwrap()
        .iter()
        .find(|(r, g, _)| (*r, *g) == key)
        .map(|c| c.2);
    let loss = match cached {
        Some(l) => l,
        None => {
            let l = llg_best_response_loss(rule, gamma, 64);
            LLG_CHECKED.lock().unwrap().push((rule, gamma.to_bits(), l));
            l
        }
    };
    if !(loss <= LLG_ORACLE_TOLERANCE) {
        return Err(Error::OracleValidation(format!(
            "LLG {rule} (gamma = {gamma}): equilibrium bid loses {loss:.2e} to a best response"
        )));
    }
    let local = BidFunction::LlgLocal { rule, gamma };
    Ok(BneOracle {
        bidders: vec![local.clone(), local, BidFunction::Truthful],
    })
}

/// The equilibrium of `game` if one is known in closed form or by quadrature.
pub fn known_bne(game: &Game) -> Result<Option<BneOracle>> {
    let spec = game.spec();
    let n = spec.n_bidders();
    let rule = game.auction.rule();
    if matches!(rule, PaymentRule::SecondPrice | PaymentRule::Vcg) {
        return Ok(Some(BneOracle {
            bidders: vec![BidFunction::Truthful; n],
        }));
    }
    match spec.kind() {
        SettingKind::SingleItem if rule == PaymentRule::FirstPrice && game.prior.is_symmetric() => {
            match bne_fpsb_symmetric(&game.prior, n, game.model) {
                Ok(o) => Ok(Some(o)),
                Err(Error::Unsupported(_)) => Ok(None),
                Err(e) => Err(e),
            }
        }
        SettingKind::Llg if rule.core_reference().is_some() && game.model.risk_rho == 1.0 => {
            let gamma = match &game.prior {
                PriorSpec::CorrelatedUniformLlg {
                    local_hi,
                    global_hi,
                    gamma,
                } if *local_hi == 1.0 && *global_hi == 2.0 => *gamma,
                PriorSpec::Uniform { lo, hi }
                    if (0..3).all(|i| lo.get(i) == 0.0) && hi.get(0) == 1.0 && hi.get(1) == 1.0 && hi.get(2) == 2.0 =>
                {
                    0.0
                }
                _ => return Ok(None),
            };
            bne_llg(rule, gamma).map(Some)
        }
        _ => Ok(None),
    }
}

//! Core-selecting payments: coalition constraints, the minimum-revenue LP and
//! the nearest-point QP, plus a closed form for LLG.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::auction::{pay_vcg, SettingSpec};
use crate::error::{Error, Result};
use crate::qp::{self, QpInstance, QpOptions, QpSolution, QpStatus};

/// Reference point the payments are pulled towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreReference {
    Vcg,
    Bids,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreSolveOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Use the QP path in LLG instead of the closed form.
    pub force_qp: bool,
    /// Relative width of the slab `R ≤ Σp ≤ R + slack·max(1, R)` replacing the
    /// revenue equality, so the nearest-point QP keeps a strictly feasible
    /// interior.
    pub slack: f64,
    /// A solve that runs out of iterations is still used when its best KKT
    /// residual is at most this.
    pub accept_tol: f64,
}

impl Default for CoreSolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 100,
            force_qp: false,
            slack: 1e-7,
            accept_tol: 1e-6,
        }
    }
}

/// `Σ_{k} coefficients[k]·p_{winners[k]} ≥ rhs`
#[derive(Debug, Clone, PartialEq)]
pub struct CoreRow {
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

/// Core polytope over the winners' payments.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreConstraintSet {
    /// Winning bidders, ascending; column `k` of every row belongs to `winners[k]`.
    pub winners: Vec<usize>,
    /// `p_k ≤ upper[k]`, the winner's bid on its bundle. `p_k ≥ 0` is implicit.
    pub upper: Vec<f64>,
    pub rows: Vec<CoreRow>,
}

impl CoreConstraintSet {
    /// Largest violation of any row or bound by a winner payment vector.
    pub fn max_violation(&self, p: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, &pk) in p.iter().enumerate() {
            worst = worst.max(-pk).max(pk - self.upper[k]);
        }
        for row in &self.rows {
            let lhs: f64 = row.coefficients.iter().zip(p).map(|(c, x)| c * x).sum();
            worst = worst.max(row.rhs - lhs);
        }
        worst
    }

    /// `G p ≤ h` form: negated rows, then upper and lower bounds.
    fn inequalities(&self) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.winners.len();
        let m = self.rows.len() + 2 * d;
        let mut g = DMatrix::zeros(m, d);
        let mut h = DVector::zeros(m);
        for (r, row) in self.rows.iter().enumerate() {
            for k in 0..d {
                g[(r, k)] = -row.coefficients[k];
            }
            h[r] = -row.rhs;
        }
        let base = self.rows.len();
        for k in 0..d {
            g[(base + k, k)] = 1.0;
            h[base + k] = self.upper[k];
            g[(base + d + k, k)] = -1.0;
        }
        (g, h)
    }
}

/// Blocking-coalition constraints for a welfare-maximal allocation.
///
/// For each nonempty subset `S` of winners the coalition is everyone outside
/// `S`; its row reads `Σ_{i∈S} p_i ≥ W(−S) − Σ_{j∈winners∖S} b_j`. Rows with
/// nonpositive right-hand side are implied by `p ≥ 0` and dropped.
pub fn generate_core_constraints(spec: &SettingSpec, bids: &[f64], allocation: usize) -> CoreConstraintSet {
    let winners: Vec<usize> = (0..spec.n_bidders())
        .filter(|&i| spec.won_slot(allocation, i).is_some())
        .collect();
    let upper: Vec<f64> = winners
        .iter()
        .map(|&i| bids[spec.won_slot(allocation, i).unwrap()])
        .collect();
    let total: f64 = upper.iter().sum();
    let d = winners.len();
    let n_alloc = spec.feasible_allocations().len();

    let mut rows = Vec::new();
    for subset in 1u32..(1 << d) {
        let mut excluded = 0u32;
        let mut own = 0.0;
        for k in 0..d {
            if subset >> k & 1 == 1 {
                excluded |= 1 << winners[k];
                own += upper[k];
            }
        }
        let w_coalition = (0..n_alloc)
            .filter(|&a| spec.allocation_winners(a) & excluded == 0)
            .map(|a| spec.welfare(a, bids))
            .fold(0.0, f64::max);
        let rhs = w_coalition - (total - own);
        if rhs > 1e-12 * total.max(1.0) {
            let coefficients = (0..d).map(|k| (subset >> k & 1) as f64).collect();
            rows.push(CoreRow { coefficients, rhs });
        }
    }
    CoreConstraintSet { winners, upper, rows }
}

fn check(sol: QpSolution, opts: &CoreSolveOptions) -> Result<QpSolution> {
    match sol.status {
        QpStatus::Solved => Ok(sol),
        QpStatus::MaxIters if sol.kkt_residual <= opts.accept_tol => {
            log::debug!("core solve stalled at kkt residual {:.3e}, accepted", sol.kkt_residual);
            Ok(sol)
        }
        status => Err(Error::Solver {
            status,
            residual: sol.kkt_residual,
        }),
    }
}

fn revenue_lp(constraints: &CoreConstraintSet, opts: &CoreSolveOptions) -> Result<QpSolution> {
    let d = constraints.winners.len();
    let (g, h) = constraints.inequalities();
    let inst = QpInstance::linear(DVector::from_element(d, 1.0)).with_inequalities(g, h);
    let sol = qp::solve_with(
        &inst,
        &QpOptions {
            tol: opts.tol,
            max_iters: opts.max_iters,
            // p = bids is always feasible
            check_feasibility: false,
        },
    )?;
    check(sol, opts)
}

/// Minimum total payment over the core polytope.
pub fn min_revenue(constraints: &CoreConstraintSet) -> Result<f64> {
    min_revenue_with(constraints, &CoreSolveOptions::default())
}

pub fn min_revenue_with(constraints: &CoreConstraintSet, opts: &CoreSolveOptions) -> Result<f64> {
    match constraints.winners.len() {
        0 => Ok(0.0),
        _ if constraints.rows.is_empty() => Ok(0.0),
        1 => Ok(single_winner_payment(constraints)),
        _ => Ok(revenue_lp(constraints, opts)?.objective),
    }
}

fn single_winner_payment(constraints: &CoreConstraintSet) -> f64 {
    let lower = constraints.rows.iter().map(|r| r.rhs).fold(0.0, f64::max);
    lower.min(constraints.upper[0])
}

/// Everything computed on the way to one set of core payments.
#[derive(Debug, Clone)]
pub struct CoreReport {
    pub constraints: CoreConstraintSet,
    /// Reference point per winner.
    pub reference: Vec<f64>,
    pub min_revenue: f64,
    /// Payments per bidder (zeros for losers).
    pub payments: Vec<f64>,
    /// Solver outputs when the general path was taken.
    pub lp: Option<QpSolution>,
    pub qp: Option<QpSolution>,
}

/// Core payments nearest to `reference` on the minimum-revenue face.
pub fn core_payments(
    spec: &SettingSpec,
    bids: &[f64],
    allocation: usize,
    reference: CoreReference,
) -> Result<Vec<f64>> {
    Ok(core_payments_report(spec, bids, allocation, reference, &CoreSolveOptions::default())?.payments)
}

/// Writes core payments (one entry per bidder) into `payments`.
pub fn core_payments_into(
    spec: &SettingSpec,
    bids: &[f64],
    allocation: usize,
    reference: CoreReference,
    opts: &CoreSolveOptions,
    payments: &mut [f64],
) -> Result<()> {
    let report = core_payments_report(spec, bids, allocation, reference, opts)?;
    payments.copy_from_slice(&report.payments);
    Ok(())
}

pub fn core_payments_report(
    spec: &SettingSpec,
    bids: &[f64],
    allocation: usize,
    reference: CoreReference,
    opts: &CoreSolveOptions,
) -> Result<CoreReport> {
    let constraints = generate_core_constraints(spec, bids, allocation);
    let d = constraints.winners.len();
    let r: Vec<f64> = match reference {
        CoreReference::Zero => vec![0.0; d],
        CoreReference::Bids => constraints.upper.clone(),
        CoreReference::Vcg => {
            let mut vcg = vec![0.0; spec.n_bidders()];
            pay_vcg(spec, bids, allocation, &mut vcg);
            constraints.winners.iter().map(|&i| vcg[i]).collect()
        }
    };
    let mut payments = vec![0.0; spec.n_bidders()];
    let mut report = CoreReport {
        constraints,
        reference: r,
        min_revenue: 0.0,
        payments: Vec::new(),
        lp: None,
        qp: None,
    };
    let c = &report.constraints;

    if d == 0 || c.rows.is_empty() {
        report.payments = payments;
        return Ok(report);
    }
    if d == 1 {
        let p = single_winner_payment(c);
        payments[c.winners[0]] = p;
        report.min_revenue = p;
        report.payments = payments;
        return Ok(report);
    }

    let lp = revenue_lp(c, opts)?;
    let revenue = lp.objective;
    let ceiling = revenue + opts.slack * revenue.max(1.0);

    // A reference already on the minimum-revenue face is its own projection.
    // Solving anyway can stall when it sits on a vertex with zero multipliers.
    let scale = c.upper.iter().sum::<f64>().max(1.0);
    if c.max_violation(&report.reference) <= 1e-12 * scale && report.reference.iter().sum::<f64>() <= ceiling {
        for (k, &i) in c.winners.iter().enumerate() {
            payments[i] = report.reference[k].clamp(0.0, c.upper[k]);
        }
        report.min_revenue = revenue;
        report.payments = payments;
        report.lp = Some(lp);
        return Ok(report);
    }

    let qp_sol = nearest_on_face(c, &report.reference, revenue, opts)?;
    for (k, &i) in c.winners.iter().enumerate() {
        // interior-point iterates sit a hair inside the bounds
        payments[i] = qp_sol.x[k].clamp(0.0, c.upper[k]);
    }
    report.min_revenue = revenue;
    report.payments = payments;
    report.lp = Some(lp);
    report.qp = Some(qp_sol);
    Ok(report)
}

/// Nearest point to `target` on the minimum-revenue face. The slab form is
/// tried first; if it stalls (two nearly coincident opposite constraints can
/// leave the multipliers unbounded), the face is posed as an equality, then
/// as a wider slab.
fn nearest_on_face(c: &CoreConstraintSet, target: &[f64], revenue: f64, opts: &CoreSolveOptions) -> Result<QpSolution> {
    let d = target.len();
    let (g, h) = c.inequalities();
    let m = g.nrows();
    let base = QpInstance::new(DMatrix::identity(d, d), -DVector::from_column_slice(target));
    let slab = |width: f64| {
        let mut g_slab = g.clone().insert_row(m, 1.0);
        for k in 0..d {
            g_slab[(m, k)] = 1.0;
        }
        let h_slab = h.clone().push(revenue + width * revenue.max(1.0));
        base.clone().with_inequalities(g_slab, h_slab)
    };
    // rows on all winners are implied by the equality; keeping them leaves a
    // parallel pair with an unbounded multiplier
    let keep: Vec<usize> = (0..m)
        .filter(|&r| r >= c.rows.len() || c.rows[r].coefficients.iter().any(|&x| x != 1.0))
        .collect();
    let g_face = g.select_rows(&keep);
    let h_face = h.select_rows(&keep);
    let attempts = [
        slab(opts.slack),
        base.clone()
            .with_inequalities(g_face, h_face)
            .with_equalities(DMatrix::from_element(1, d, 1.0), DVector::from_element(1, revenue)),
        slab(100.0 * opts.slack),
    ];
    let qp_opts = QpOptions {
        tol: opts.tol,
        max_iters: opts.max_iters,
        check_feasibility: false,
    };
    let mut best: Option<QpSolution> = None;
    for inst in &attempts {
        let sol = qp::solve_with(inst, &qp_opts)?;
        if sol.status == QpStatus::Solved {
            return Ok(sol);
        }
        if best.as_ref().is_none_or(|b| sol.kkt_residual < b.kkt_residual) {
            best = Some(sol);
        }
    }
    check(best.expect("at least one attempt"), opts)
}

/// Core payments in LLG for bids `[b_local1, b_local2, b_global]`.
pub fn llg_core_closed_form(bids: [f64; 3], reference: CoreReference) -> [f64; 3] {
    let [b1, b2, bg] = bids;
    if b1 + b2 > bg {
        let vcg1 = (bg - b2).max(0.0);
        let vcg2 = (bg - b1).max(0.0);
        let (r1, r2) = match reference {
            CoreReference::Zero => (0.0, 0.0),
            CoreReference::Bids => (b1, b2),
            CoreReference::Vcg => (vcg1, vcg2),
        };
        let p1 = ((r1 - r2 + bg) / 2.0).clamp(vcg1, b1.min(bg));
        [p1, bg - p1, 0.0]
    } else if bg > 0.0 {
        [0.0, 0.0, b1 + b2]
    } else {
        [0.0; 3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::winner_determination;
    use approx::assert_abs_diff_eq;

    const BIDS: [f64; 3] = [0.6, 0.7, 1.0];

    fn llg_constraints() -> CoreConstraintSet {
        let spec = SettingSpec::llg();
        let a = winner_determination(&spec, &BIDS);
        generate_core_constraints(&spec, &BIDS, a)
    }

    #[test]
    fn llg_rows() {
        let c = llg_constraints();
        assert_eq!(c.winners, vec![0, 1]);
        assert_eq!(c.upper, vec![0.6, 0.7]);
        let mut rows: Vec<(Vec<f64>, f64)> = c.rows.iter().map(|r| (r.coefficients.clone(), r.rhs)).collect();
        rows.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].0, vec![1.0, 0.0]);
        assert_abs_diff_eq!(rows[0].1, 0.3, epsilon = 1e-12);
        assert_eq!(rows[1].0, vec![0.0, 1.0]);
        assert_abs_diff_eq!(rows[1].1, 0.4, epsilon = 1e-12);
        assert_eq!(rows[2].0, vec![1.0, 1.0]);
        assert_abs_diff_eq!(rows[2].1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn llg_min_revenue() {
        assert_abs_diff_eq!(min_revenue(&llg_constraints()).unwrap(), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn llg_examples_both_paths() {
        let spec = SettingSpec::llg();
        let a = winner_determination(&spec, &BIDS);
        for (reference, expected) in [
            (CoreReference::Zero, [0.5, 0.5, 0.0]),
            (CoreReference::Bids, [0.45, 0.55, 0.0]),
            (CoreReference::Vcg, [0.45, 0.55, 0.0]),
        ] {
            let qp = core_payments(&spec, &BIDS, a, reference).unwrap();
            let closed = llg_core_closed_form(BIDS, reference);
            for k in 0..3 {
                assert_abs_diff_eq!(qp[k], expected[k], epsilon = 1e-6);
                assert_abs_diff_eq!(closed[k], expected[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_item_core_is_second_price() {
        let spec = SettingSpec::single_item(3).unwrap();
        let bids = [4.0, 7.0, 5.5];
        let a = winner_determination(&spec, &bids);
        let c = generate_core_constraints(&spec, &bids, a);
        assert_abs_diff_eq!(min_revenue(&c).unwrap(), 5.5, epsilon = 1e-12);
        for reference in [CoreReference::Zero, CoreReference::Bids, CoreReference::Vcg] {
            assert_eq!(core_payments(&spec, &bids, a, reference).unwrap(), vec![0.0, 5.5, 0.0]);
        }
    }

    #[test]
    fn empty_and_uncontested() {
        let spec = SettingSpec::llg();
        let c = generate_core_constraints(&spec, &[0.0; 3], 0);
        assert!(c.winners.is_empty() && c.rows.is_empty());
        assert_eq!(min_revenue(&c).unwrap(), 0.0);
        assert_eq!(core_payments(&spec, &[0.0; 3], 0, CoreReference::Bids).unwrap(), vec![0.0; 3]);

        let lone = SettingSpec::single_item(1).unwrap();
        let c = generate_core_constraints(&lone, &[3.0], 1);
        assert_eq!(c.winners, vec![0]);
        assert!(c.rows.is_empty());
        assert_eq!(core_payments(&lone, &[3.0], 1, CoreReference::Bids).unwrap(), vec![0.0]);
    }

    #[test]
    fn llg_global_win() {
        let spec = SettingSpec::llg();
        let bids = [0.2, 0.3, 1.0];
        let a = winner_determination(&spec, &bids);
        let p = core_payments(&spec, &bids, a, CoreReference::Vcg).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 0.5]);
        assert_eq!(llg_core_closed_form(bids, CoreReference::Vcg), [0.0, 0.0, 0.5]);
    }

    #[test]
    fn llllgg_core_is_feasible() {
        let spec = SettingSpec::llllgg();
        // locals 0 and 2 take {0,1},{2,3}; local 3 can take {4,5}; global 1 competes
        let mut bids = vec![0.0; spec.n_slots()];
        bids[0] = 0.9;
        bids[4] = 0.8;
        bids[7] = 0.7;
        bids[10] = 1.5;
        bids[11] = 2.0;
        let a = winner_determination(&spec, &bids);
        for reference in [CoreReference::Zero, CoreReference::Bids, CoreReference::Vcg] {
            let report = core_payments_report(&spec, &bids, a, reference, &CoreSolveOptions::default()).unwrap();
            let p: Vec<f64> = report.constraints.winners.iter().map(|&i| report.payments[i]).collect();
            assert!(report.constraints.max_violation(&p) < 1e-6);
            assert_abs_diff_eq!(p.iter().sum::<f64>(), report.min_revenue, epsilon = 1e-6);
        }
    }

    #[test]
    fn stalled_solves_within_accept_tol_are_used() {
        let spec = SettingSpec::llg();
        let bids = [0.6, 0.7, 1.0];
        let a = winner_determination(&spec, &bids);
        let stalled = CoreSolveOptions {
            max_iters: 2,
            force_qp: true,
            ..CoreSolveOptions::default()
        };
        let strict = CoreSolveOptions { accept_tol: 0.0, ..stalled };
        assert!(matches!(
            core_payments_report(&spec, &bids, a, CoreReference::Vcg, &strict),
            Err(Error::Solver { .. })
        ));
        let loose = CoreSolveOptions { accept_tol: f64::INFINITY, ..stalled };
        let report = core_payments_report(&spec, &bids, a, CoreReference::Vcg, &loose).unwrap();
        assert!(report.payments.iter().all(|p| p.is_finite()));
    }
}

//! Dense primal-dual interior-point solver for small convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀQx + cᵀx
//! subject to  G x ≤ h
//!             A x = b
//! ```
//!
//! The solver is an infeasible-start Mehrotra predictor-corrector method with a
//! fixed fraction-to-boundary factor. Each Newton step factors the reduced KKT
//! system `[Q + GᵀS⁻¹ZG, Aᵀ; A, 0]` densely; problems here have a handful of
//! variables and at most a few dozen rows, so batches are parallelized across
//! instances rather than within one.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

const FRACTION_TO_BOUNDARY: f64 = 0.995;
const STALL_ITERS: usize = 15;
const CONSERVATIVE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QpInstance {
    /// Unconstrained problem; add rows with the `with_*` builders.
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Self {
        let d = c.len();
        Self {
            q,
            c,
            g: DMatrix::zeros(0, d),
            h: DVector::zeros(0),
            a: DMatrix::zeros(0, d),
            b: DVector::zeros(0),
        }
    }

    /// Linear program `min cᵀx`.
    pub fn linear(c: DVector<f64>) -> Self {
        let d = c.len();
        Self::new(DMatrix::zeros(d, d), c)
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.g = g;
        self.h = h;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let d = self.c.len();
        let shape_err = |what: &str| Err(Error::Shape(format!("QP: {what}")));
        if self.q.nrows() != d || self.q.ncols() != d {
            return shape_err("Q must be d×d");
        }
        if self.g.ncols() != d || self.g.nrows() != self.h.len() {
            return shape_err("G must be m×d with h of length m");
        }
        if self.a.ncols() != d || self.a.nrows() != self.b.len() {
            return shape_err("A must be k×d with b of length k");
        }
        let all_finite = self.q.iter().chain(self.c.iter()).chain(self.g.iter()).chain(self.h.iter())
            .chain(self.a.iter()).chain(self.b.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("QP data"));
        }
        check_psd(&self.q)
    }
}

/// Symmetry within rounding plus a Cholesky factorization of `Q + εI`.
fn check_psd(q: &DMatrix<f64>) -> Result<()> {
    let d = q.nrows();
    if d == 0 {
        return Ok(());
    }
    let scale = q.amax().max(1.0);
    for i in 0..d {
        for j in 0..i {
            if (q[(i, j)] - q[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotPsd);
            }
        }
    }
    let shifted = q + DMatrix::identity(d, d) * (1e-10 * scale);
    if shifted.cholesky().is_none() {
        return Err(Error::NotPsd);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// max of dual residual, primal residuals and the complementarity gap sᵀz.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Run the phase-one feasibility LP when the starting point is not strictly
    /// feasible. Callers that know their polytope is nonempty can skip it.
    pub check_feasibility: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 100,
            check_feasibility: true,
        }
    }
}

/// Solves one instance with the given tolerance and iteration budget.
pub fn solve(instance: &QpInstance, tol: f64, max_iters: usize) -> Result<QpSolution> {
    solve_with(
        instance,
        &QpOptions {
            tol,
            max_iters,
            ..QpOptions::default()
        },
    )
}

/// Solves every instance independently; an infeasible or stalled instance only
/// affects its own entry.
pub fn solve_batch(instances: &[QpInstance], tol: f64, max_iters: usize) -> Vec<Result<QpSolution>> {
    instances
        .par_iter()
        .map(|inst| solve(inst, tol, max_iters))
        .collect()
}

pub fn solve_with(instance: &QpInstance, opts: &QpOptions) -> Result<QpSolution> {
    instance.validate()?;
    let d = instance.dim();
    let x0 = match equality_start(instance, opts.tol) {
        Some(x) => x,
        None => return Ok(infeasible(instance, DVector::zeros(d))),
    };

    let strictly_feasible = instance.g.nrows() == 0
        || (&instance.h - &instance.g * &x0).iter().all(|&s| s > 0.0);
    let start = if strictly_feasible || !opts.check_feasibility {
        x0
    } else {
        match phase_one(instance, &x0, opts)? {
            Some(x) => x,
            None => return Ok(infeasible(instance, x0)),
        }
    };
    Ok(interior_point(instance, start, opts))
}

fn infeasible(instance: &QpInstance, x: DVector<f64>) -> QpSolution {
    QpSolution {
        objective: instance.objective(&x),
        x,
        kkt_residual: f64::INFINITY,
        iterations: 0,
        status: QpStatus::Infeasible,
    }
}

/// Least-norm solution of `Ax = b`, or `None` if the system is inconsistent.
fn equality_start(instance: &QpInstance, tol: f64) -> Option<DVector<f64>> {
    let d = instance.dim();
    if instance.a.nrows() == 0 {
        return Some(DVector::zeros(d));
    }
    let svd = instance.a.clone().svd(true, true);
    let x = svd.solve(&instance.b, 1e-12).ok()?;
    let residual = (&instance.a * &x - &instance.b).amax();
    (residual <= tol.max(1e-10) * (1.0 + instance.b.amax())).then_some(x)
}

/// Phase one: `min t  s.t.  Gx − t ≤ h,  Ax = b,  t ≥ −1`, started strictly
/// feasible by shifting `t` above the worst violation. Returns a point with
/// `Gx ≤ h + tol` or `None` when the constraints cannot be met.
fn phase_one(instance: &QpInstance, x0: &DVector<f64>, opts: &QpOptions) -> Result<Option<DVector<f64>>> {
    let d = instance.dim();
    let m = instance.g.nrows();
    let k = instance.a.nrows();

    // small proximal term keeps the x-block of the reduced KKT system definite
    let mut q = DMatrix::zeros(d + 1, d + 1);
    for i in 0..d {
        q[(i, i)] = 1e-8;
    }
    let mut c = DVector::zeros(d + 1);
    c[d] = 1.0;
    for i in 0..d {
        c[i] = -1e-8 * x0[i];
    }
    let mut g = DMatrix::zeros(m + 1, d + 1);
    let mut h = DVector::zeros(m + 1);
    for r in 0..m {
        for j in 0..d {
            g[(r, j)] = instance.g[(r, j)];
        }
        g[(r, d)] = -1.0;
        h[r] = instance.h[r];
    }
    g[(m, d)] = -1.0;
    h[m] = 1.0;
    let mut a = DMatrix::zeros(k, d + 1);
    for r in 0..k {
        for j in 0..d {
            a[(r, j)] = instance.a[(r, j)];
        }
    }
    let aux = QpInstance {
        q,
        c,
        g,
        h,
        a,
        b: instance.b.clone(),
    };

    let violation = (&instance.g * x0 - &instance.h).max();
    let mut start = DVector::zeros(d + 1);
    start.rows_mut(0, d).copy_from(x0);
    start[d] = violation.max(-0.5) + 1.0;

    let sol = interior_point(&aux, start, opts);
    let t = sol.x[d];
    let x = sol.x.rows(0, d).into_owned();
    let worst = (&instance.g * &x - &instance.h).max();
    if worst > opts.tol.max(1e-9) * (1.0 + instance.h.amax()) && t > 0.0 {
        return Ok(None);
    }
    Ok(Some(x))
}

struct Residuals {
    dual: DVector<f64>,
    eq: DVector<f64>,
    ineq: DVector<f64>,
    gap: f64,
}

impl Residuals {
    fn compute(p: &QpInstance, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, s: &DVector<f64>) -> Self {
        let dual = &p.q * x + &p.c + p.a.tr_mul(y) + p.g.tr_mul(z);
        let eq = &p.a * x - &p.b;
        let ineq = &p.g * x + s - &p.h;
        Self {
            dual,
            eq,
            ineq,
            gap: s.dot(z),
        }
    }

    fn norm(&self) -> f64 {
        let inf = |v: &DVector<f64>| if v.is_empty() { 0.0 } else { v.amax() };
        inf(&self.dual).max(inf(&self.eq)).max(inf(&self.ineq)).max(self.gap.abs())
    }
}

/// Largest step in (0, 1] keeping `v + α dv ≥ 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&vi, &d)| -vi / d)
        .fold(1.0, f64::min)
}

struct Newton {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    d: usize,
}

impl Newton {
    fn factor(p: &QpInstance, s: &DVector<f64>, z: &DVector<f64>, reg: f64) -> Option<Self> {
        let d = p.dim();
        let k = p.a.nrows();
        let mut kkt = DMatrix::zeros(d + k, d + k);
        let w = z.component_div(s);
        let mut hess = p.q.clone();
        for (r, &wr) in w.iter().enumerate() {
            let row = p.g.row(r);
            for i in 0..d {
                let gi = row[i] * wr;
                if gi != 0.0 {
                    for j in 0..d {
                        hess[(i, j)] += gi * row[j];
                    }
                }
            }
        }
        kkt.view_mut((0, 0), (d, d)).copy_from(&hess);
        kkt.view_mut((d, 0), (k, d)).copy_from(&p.a);
        kkt.view_mut((0, d), (d, k)).copy_from(&p.a.transpose());
        if reg > 0.0 {
            let scale = reg * (0..d).map(|i| kkt[(i, i)].abs()).fold(1.0, f64::max);
            for i in 0..d {
                kkt[(i, i)] += scale;
            }
            for i in d..d + k {
                kkt[(i, i)] -= scale;
            }
        }
        let lu = kkt.lu();
        lu.is_invertible().then_some(Self { lu, d })
    }

    /// Search direction for complementarity target `rc` (`Z·ds + S·dz = rc`).
    fn direction(
        &self,
        p: &QpInstance,
        res: &Residuals,
        s: &DVector<f64>,
        z: &DVector<f64>,
        rc: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
        let d = self.d;
        let k = p.a.nrows();
        // dz = (rc + Z·r_ineq + Z·G·dx) / s
        let t = (rc + z.component_mul(&res.ineq)).component_div(s);
        let mut rhs = DVector::zeros(d + k);
        rhs.rows_mut(0, d).copy_from(&(-&res.dual - p.g.tr_mul(&t)));
        rhs.rows_mut(d, k).copy_from(&(-&res.eq));
        let sol = self.lu.solve(&rhs)?;
        let dx = sol.rows(0, d).into_owned();
        let dy = sol.rows(d, k).into_owned();
        let gdx = &p.g * &dx;
        let ds = -&res.ineq - &gdx;
        let dz = &t + z.component_mul(&gdx).component_div(s);
        if dx.iter().chain(dz.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dx, dy, dz, ds))
    }
}

fn interior_point(p: &QpInstance, x_start: DVector<f64>, opts: &QpOptions) -> QpSolution {
    let m = p.g.nrows();
    let k = p.a.nrows();
    let mut x = x_start;
    let mut y = DVector::zeros(k);
    let mut s = (&p.h - &p.g * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);

    let mut best = (f64::INFINITY, x.clone());
    // Mehrotra's corrector can cycle between vertices; after STALL_ITERS
    // iterations without halving the residual, switch to plain path following
    let mut last_progress = 0;
    let mut progress_norm = f64::INFINITY;
    let mut conservative = false;
    for iter in 0..=opts.max_iters {
        let res = Residuals::compute(p, &x, &y, &z, &s);
        let norm = res.norm();
        if norm < best.0 {
            best = (norm, x.clone());
        }
        if norm <= 0.5 * progress_norm {
            progress_norm = norm;
            last_progress = iter;
        } else if iter - last_progress >= STALL_ITERS {
            conservative = true;
        }
        if norm <= opts.tol {
            return QpSolution {
                objective: p.objective(&x),
                x,
                kkt_residual: norm,
                iterations: iter,
                status: QpStatus::Solved,
            };
        }
        if iter == opts.max_iters {
            break;
        }

        // near convergence z/s spans many orders of magnitude and the reduced
        // matrix can round to singular; retry with regularization relative to it
        let newton = [0.0, 1e-13, 1e-10]
            .into_iter()
            .find_map(|reg| Newton::factor(p, &s, &z, reg));
        let Some(newton) = newton else { break };

        let rc_aff = -s.component_mul(&z);
        let rc = if conservative {
            rc_aff + DVector::from_element(m, CONSERVATIVE_SIGMA * res.gap / m.max(1) as f64)
        } else {
            // predictor
            let Some((_, _, dz_aff, ds_aff)) = newton.direction(p, &res, &s, &z, &rc_aff) else {
                break;
            };
            let (sigma, mu) = if m > 0 {
                let mu = res.gap / m as f64;
                let alpha = max_step(&s, &ds_aff).min(max_step(&z, &dz_aff));
                let mu_aff = (&s + &ds_aff * alpha).dot(&(&z + &dz_aff * alpha)) / m as f64;
                ((mu_aff / mu).powi(3).min(1.0), mu)
            } else {
                (0.0, 0.0)
            };
            // corrector
            rc_aff - ds_aff.component_mul(&dz_aff) + DVector::from_element(m, sigma * mu)
        };
        let Some((dx, dy, dz, ds)) = newton.direction(p, &res, &s, &z, &rc) else {
            break;
        };
        let alpha = (FRACTION_TO_BOUNDARY * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        let alpha = if m == 0 { 1.0 } else { alpha };
        x += &dx * alpha;
        y += &dy * alpha;
        z += &dz * alpha;
        s += &ds * alpha;
    }

    let (norm, x) = best;
    QpSolution {
        objective: p.objective(&x),
        x,
        kkt_residual: norm,
        iterations: opts.max_iters,
        status: QpStatus::MaxIters,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn active_upper_bound() {
        // (x − 1)² = x² − 2x + 1  →  Q = 2, c = −2
        let inst = QpInstance::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, -2.0))
            .with_inequalities(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.5));
        let sol = solve(&inst, 1e-9, 100).unwrap();
        assert!(sol.is_solved());
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn symmetric_equality() {
        let inst = QpInstance::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 1.0));
        let sol = solve(&inst, 1e-9, 100).unwrap();
        assert!(sol.is_solved());
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn corrector_cycling_instance() {
        // the predictor-corrector alone bounces between (0.784, 0.851) and (0.847, 0.788)
        let g = DMatrix::from_row_slice(4, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 1.0]);
        let h = DVector::from_row_slice(&[-0.7835366960185324, -0.7872440320220564, 0.9380887418695059, 1.965262817739645]);
        let r = 1.634556482509653;
        let inst = QpInstance::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_inequalities(g, h)
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, r));
        let sol = solve_with(
            &inst,
            &QpOptions {
                tol: 1e-10,
                max_iters: 100,
                check_feasibility: false,
            },
        )
        .unwrap();
        assert!(sol.is_solved(), "{sol:?}");
        assert_abs_diff_eq!(sol.x[0], r / 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[1], r / 2.0, epsilon = 1e-8);
    }

    #[test]
    fn llg_nearest_zero_instance() {
        // min p1² + p2²  s.t. p1 + p2 = 1,  0 ≤ p ≤ (0.6, 0.7)
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let h = DVector::from_row_slice(&[0.6, 0.7, 0.0, 0.0]);
        let inst = QpInstance::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_inequalities(g, h)
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 1.0));
        let sol = solve(&inst, 1e-9, 100).unwrap();
        assert!(sol.is_solved());
        assert_abs_diff_eq!(sol.x[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[1], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn linear_program() {
        // min −x − y  s.t. x + 2y ≤ 4, 3x + y ≤ 6, x, y ≥ 0  →  (1.6, 1.2)
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let h = DVector::from_row_slice(&[4.0, 6.0, 0.0, 0.0]);
        let inst = QpInstance::linear(DVector::from_row_slice(&[-1.0, -1.0])).with_inequalities(g, h);
        let sol = solve(&inst, 1e-9, 100).unwrap();
        assert!(sol.is_solved(), "{sol:?}");
        assert_abs_diff_eq!(sol.x[0], 1.6, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.x[1], 1.2, epsilon = 1e-7);
    }

    #[test]
    fn infeasible_is_reported() {
        // x ≤ −1 and x ≥ 1
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let h = DVector::from_row_slice(&[-1.0, -1.0]);
        let inst = QpInstance::new(DMatrix::identity(1, 1), DVector::zeros(1)).with_inequalities(g, h);
        assert_eq!(solve(&inst, 1e-9, 100).unwrap().status, QpStatus::Infeasible);

        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_row_slice(&[0.0, 1.0]);
        let inst = QpInstance::new(DMatrix::identity(1, 1), DVector::zeros(1)).with_equalities(a, b);
        assert_eq!(solve(&inst, 1e-9, 100).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_bad_input() {
        let not_psd = QpInstance::new(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1));
        assert!(matches!(solve(&not_psd, 1e-9, 10), Err(Error::NotPsd)));
        let asym = QpInstance::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
        assert!(matches!(solve(&asym, 1e-9, 10), Err(Error::NotPsd)));
        let shape = QpInstance::new(DMatrix::identity(2, 2), DVector::zeros(3));
        assert!(matches!(solve(&shape, 1e-9, 10), Err(Error::Shape(_))));
    }

    #[test]
    fn deterministic() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let inst = QpInstance::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), DVector::from_row_slice(&[-1.0, -3.0]))
            .with_inequalities(g, DVector::from_row_slice(&[1.0, 0.0, 0.0]));
        let a = solve(&inst, 1e-10, 100).unwrap();
        let b = solve(&inst, 1e-10, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_isolates_infeasible_entries() {
        let good = QpInstance::new(DMatrix::identity(1, 1), DVector::from_element(1, -1.0));
        let bad = QpInstance::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::from_row_slice(&[-1.0, -1.0]));
        let out = solve_batch(&[good.clone(), bad, good.clone()], 1e-9, 100);
        assert!(out[0].as_ref().unwrap().is_solved());
        assert_eq!(out[1].as_ref().unwrap().status, QpStatus::Infeasible);
        assert_eq!(out[2].as_ref().unwrap(), &solve(&good, 1e-9, 100).unwrap());
    }
}

//! Dense convex QP with equality constraints and nonnegativity bounds on an
//! index subset:
//!
//! ```text
//! minimize ½ xᵀHx + cᵀx   subject to   A x = b,   x_i ≥ 0 (i ∈ I)
//! ```
//!
//! Equalities are eliminated through an SVD nullspace basis `Z`, so
//! `x = x_p + Z d` with `x_p = A⁺b`. A primal active-set method then works
//! on the bound rows `Z[i, :] d ≥ −x_p[i]`. Singular reduced Hessians are
//! handled with minimum-norm (pseudo-inverse) steps, and zero-curvature
//! descent directions are followed as rays. A phase-1 problem with one
//! artificial variable supplies a feasible start when needed.
//!
//! Sign convention for the multipliers:
//! `H x + c − Aᵀλ − Σ_{i∈I} μ_i e_i = 0` with `μ ≥ 0`.

use log::trace;
use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix, Tolerance, Vector};

/// KKT residual bound for an optimal return.
pub const KKT_TOL: f64 = 1e-8;
/// Largest tolerated bound violation.
pub const BOUND_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProgram {
    pub h: Matrix,
    pub c: Vector,
    pub a_eq: Matrix,
    pub b_eq: Vector,
    pub nonneg_idx: Vec<usize>,
}

impl QuadraticProgram {
    pub fn new(h: Matrix, c: Vector, a_eq: Matrix, b_eq: Vector, nonneg_idx: Vec<usize>) -> Result<Self> {
        let qp = QuadraticProgram { h, c, a_eq, b_eq, nonneg_idx };
        qp.validate()?;
        Ok(qp)
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.h.shape() != (n, n) {
            return Err(Error::dimension("QP Hessian", format!("{n}x{n}"), format!("{:?}", self.h.shape())));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::dimension(
                "QP equalities",
                format!("{}x{n}", self.b_eq.len()),
                format!("{:?}", self.a_eq.shape()),
            ));
        }
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-12 * self.h.amax().max(1.0) {
            return Err(Error::validation("H", format!("not symmetric (max deviation {asym:.3e})")));
        }
        if let Some(&i) = self.nonneg_idx.iter().find(|&&i| i >= n) {
            return Err(Error::validation("nonneg_idx", format!("index {i} outside 0..{n}")));
        }
        Ok(())
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    Unbounded,
}

/// Scaled KKT violations of a candidate primal–dual triple.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_bound: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        [self.stationarity, self.primal_eq, self.primal_bound, self.dual, self.complementarity]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: Vector,
    /// Equality multipliers `λ`.
    pub eq_duals: Vector,
    /// Bound multipliers `μ`, aligned with `nonneg_idx` (zero when inactive).
    pub bound_duals: Vector,
    pub kkt: KktReport,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Variable indices whose bound is in the final working set.
    pub active_bounds: Vec<usize>,
    pub objective: f64,
    /// For infeasible problems: scaled equality residual of `A x = b`.
    pub infeasibility: f64,
}

/// Evaluate the KKT conditions in the original variables.
pub fn kkt_report(qp: &QuadraticProgram, x: &Vector, lambda: &Vector, mu: &Vector) -> KktReport {
    let hx = &qp.h * x;
    let atl = if qp.a_eq.nrows() > 0 { qp.a_eq.transpose() * lambda } else { Vector::zeros(x.len()) };
    let mut r = &hx + &qp.c - &atl;
    for (k, &i) in qp.nonneg_idx.iter().enumerate() {
        r[i] -= mu[k];
    }
    let sscale = [hx.amax(), qp.c.amax(), atl.amax(), mu.amax()].into_iter().fold(1.0, f64::max);
    let eq = if qp.a_eq.nrows() > 0 { (&qp.a_eq * x - &qp.b_eq).amax() / qp.b_eq.amax().max(1.0) } else { 0.0 };
    let xscale = x.amax().max(1.0);
    let mut rep = KktReport { stationarity: r.amax() / sscale, primal_eq: eq, ..KktReport::default() };
    for (k, &i) in qp.nonneg_idx.iter().enumerate() {
        rep.primal_bound = rep.primal_bound.max(-x[i]);
        rep.dual = rep.dual.max(-mu[k] / sscale);
        rep.complementarity = rep.complementarity.max((mu[k] * x[i]).abs() / (sscale * xscale));
    }
    rep
}

/// Minimum-norm pseudo-inverse of a symmetric PSD matrix, plus a basis of
/// its (numerical) kernel.
fn psd_pinv(m: &Matrix, tol: &Tolerance) -> (Matrix, Matrix) {
    let n = m.nrows();
    if n == 0 {
        return (Matrix::zeros(0, 0), Matrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let thr = tol.threshold(top, 0.0);
    let mut pinv = Matrix::zeros(n, n);
    let mut kernel = Vec::new();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        if lam > thr {
            pinv += (v * v.transpose()) / lam;
        } else {
            kernel.push(v.into_owned());
        }
    }
    let kernel = if kernel.is_empty() { Matrix::zeros(n, 0) } else { Matrix::from_columns(&kernel) };
    (pinv, kernel)
}

/// Equality elimination shared by every solve with the same `A`.
#[derive(Clone, Debug)]
pub struct EqualityFactorization {
    pub rank: usize,
    /// `A⁺` (n × m).
    a_pinv: Matrix,
    /// `(Aᵀ)⁺` (m × n).
    at_pinv: Matrix,
    /// Orthonormal nullspace basis of `A` (n × nd).
    pub z: Matrix,
}

impl EqualityFactorization {
    pub fn new(a_eq: &Matrix, tol: &Tolerance) -> Self {
        let (m, n) = a_eq.shape();
        if m == 0 {
            return EqualityFactorization {
                rank: 0,
                a_pinv: Matrix::zeros(n, 0),
                at_pinv: Matrix::zeros(0, n),
                z: Matrix::identity(n, n),
            };
        }
        let (z, decision) = tol.null_space(a_eq, 0.0);
        let d = svd(a_eq, false);
        let r = decision.rank;
        let mut a_pinv = Matrix::zeros(n, m);
        for k in 0..r {
            a_pinv += d.v.column(k) * d.u.column(k).transpose() / d.s[k];
        }
        EqualityFactorization { rank: r, at_pinv: a_pinv.transpose(), a_pinv, z }
    }

    pub fn particular(&self, b: &Vector) -> Vector {
        &self.a_pinv * b
    }
}

struct Inner<'a> {
    g: &'a Matrix,
    h: &'a Vector,
    rows: &'a Matrix,
    b: &'a Vector,
    tol: Tolerance,
    /// Pseudo-inverse and kernel of `g` for the empty working set.
    free: Option<&'a (Matrix, Matrix)>,
}

struct InnerResult {
    d: Vector,
    working: Vec<usize>,
    mu: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

impl Inner<'_> {
    fn run(&self, mut d: Vector, mut working: Vec<usize>, max_iter: usize) -> InnerResult {
        let nd = d.len();
        let m = self.rows.nrows();
        let scale = self.h.amax().max(1.0);
        let mut iterations = 0;
        while iterations < max_iter {
            iterations += 1;
            let grad = self.g * &d + self.h;
            let (y, gy_pinv, gy_kernel) = if working.is_empty() {
                match self.free {
                    Some((pinv, kernel)) => (None, pinv.clone(), kernel.clone()),
                    None => {
                        let (p, k) = psd_pinv(self.g, &self.tol);
                        (None, p, k)
                    }
                }
            } else {
                let aw = Matrix::from_rows(&working.iter().map(|&i| self.rows.row(i)).collect::<Vec<_>>());
                let (y, _) = self.tol.null_space(&aw, 0.0);
                let gy = y.transpose() * self.g * &y;
                let (p, k) = psd_pinv(&gy, &self.tol);
                (Some(y), p, k)
            };
            let gproj = match &y {
                Some(y) => y.transpose() * &grad,
                None => grad.clone(),
            };
            // gradient component the curvature cannot absorb → descent ray
            let ray = if gy_kernel.ncols() > 0 {
                &gy_kernel * (gy_kernel.transpose() * &gproj)
            } else {
                Vector::zeros(gproj.len())
            };
            let (py, max_step) =
                if ray.amax() > 1e-12 * scale { (-ray, f64::INFINITY) } else { (-(&gy_pinv * &gproj), 1.0) };
            let p = match &y {
                Some(y) => y * &py,
                None => py,
            };

            if p.amax() <= 1e-13 * d.amax().max(1.0) {
                // stationary on the working set: check multiplier signs
                let mu = if working.is_empty() {
                    Vec::new()
                } else {
                    let awt = Matrix::from_columns(
                        &working.iter().map(|&i| self.rows.row(i).transpose()).collect::<Vec<_>>(),
                    );
                    self.tol.lstsq(&awt, &grad).iter().copied().collect()
                };
                let neg = mu.iter().enumerate().filter(|(_, &v)| v < -1e-10 * scale).map(|(k, &v)| (k, v));
                // most negative first; Bland's rule once iterations pile up
                let drop = if iterations > nd + m {
                    neg.min_by_key(|&(k, _)| working[k])
                } else {
                    neg.min_by(|a, b| a.1.total_cmp(&b.1))
                };
                match drop {
                    None => return InnerResult { d, working, mu, status: QpStatus::Optimal, iterations },
                    Some((k, _)) => {
                        trace!("drop bound row {}", working[k]);
                        working.remove(k);
                        continue;
                    }
                }
            }

            let pnorm = p.norm();
            let mut step = max_step;
            let mut blocking = None;
            for i in 0..m {
                if working.contains(&i) {
                    continue;
                }
                let row = self.rows.row(i);
                let ap = row.dot(&p.transpose());
                if ap < -1e-14 * row.norm() * pnorm {
                    let slack = (row.dot(&d.transpose()) - self.b[i]).max(0.0);
                    let s = slack / -ap;
                    if s < step {
                        step = s;
                        blocking = Some(i);
                    }
                }
            }
            if step.is_infinite() {
                return InnerResult { d, working, mu: Vec::new(), status: QpStatus::Unbounded, iterations };
            }
            d.axpy(step, &p, 1.0);
            if let Some(i) = blocking {
                trace!("add bound row {i} (step {step:.3e})");
                working.push(i);
            }
        }
        InnerResult { d, working, mu: Vec::new(), status: QpStatus::MaxIterations, iterations }
    }
}

/// Solver prepared for a fixed `(H, A, I)`; only `c` and `b` vary per solve.
#[derive(Clone, Debug)]
pub struct QpSolver {
    h: Matrix,
    a_eq: Matrix,
    nonneg_idx: Vec<usize>,
    fact: EqualityFactorization,
    /// Reduced Hessian `Zᵀ H Z`.
    g: Matrix,
    g_free: (Matrix, Matrix),
    /// Bound rows `Z[i, :]`.
    rows: Matrix,
    tol: Tolerance,
}

impl QpSolver {
    pub fn new(h: &Matrix, a_eq: &Matrix, nonneg_idx: &[usize]) -> Result<Self> {
        let n = h.nrows();
        let probe = QuadraticProgram {
            h: h.clone(),
            c: Vector::zeros(n),
            a_eq: a_eq.clone(),
            b_eq: Vector::zeros(a_eq.nrows()),
            nonneg_idx: nonneg_idx.to_vec(),
        };
        probe.validate()?;
        let tol = Tolerance::default();
        let fact = EqualityFactorization::new(a_eq, &tol);
        let g = fact.z.transpose() * h * &fact.z;
        let g = (&g + g.transpose()) * 0.5;
        let g_free = psd_pinv(&g, &tol);
        let rows = Matrix::from_fn(nonneg_idx.len(), fact.z.ncols(), |r, c| fact.z[(nonneg_idx[r], c)]);
        Ok(QpSolver { h: h.clone(), a_eq: a_eq.clone(), nonneg_idx: nonneg_idx.to_vec(), fact, g, g_free, rows, tol })
    }

    pub fn equality_rank(&self) -> usize {
        self.fact.rank
    }

    /// Scaled residual of the least-squares solution of `A x = b`.
    pub fn equality_residual(&self, b: &Vector) -> f64 {
        if b.is_empty() {
            return 0.0;
        }
        let xp = self.fact.particular(b);
        (&self.a_eq * xp - b).amax() / b.amax().max(1.0)
    }

    pub fn solve(&self, c: &Vector, b_eq: &Vector) -> Result<QpSolution> {
        let n = self.h.nrows();
        if c.len() != n || b_eq.len() != self.a_eq.nrows() {
            return Err(Error::dimension(
                "QP data",
                format!("c: {n}, b: {}", self.a_eq.nrows()),
                format!("c: {}, b: {}", c.len(), b_eq.len()),
            ));
        }
        let qp = QuadraticProgram {
            h: self.h.clone(),
            c: c.clone(),
            a_eq: self.a_eq.clone(),
            b_eq: b_eq.clone(),
            nonneg_idx: self.nonneg_idx.clone(),
        };
        let xp = self.fact.particular(b_eq);
        let infeas = self.equality_residual(b_eq);
        let nb = self.nonneg_idx.len();
        let give_up = |status, iterations, x: Vector, infeasibility| QpSolution {
            objective: qp.objective(&x),
            x,
            eq_duals: Vector::zeros(b_eq.len()),
            bound_duals: Vector::zeros(nb),
            kkt: KktReport::default(),
            kkt_residual: f64::INFINITY,
            status,
            iterations,
            active_bounds: Vec::new(),
            infeasibility,
        };
        if infeas > KKT_TOL {
            return Ok(give_up(QpStatus::Infeasible, 0, xp, infeas));
        }

        let h_red = self.fact.z.transpose() * (&self.h * &xp + c);
        let b_rows = Vector::from_iterator(nb, self.nonneg_idx.iter().map(|&i| -xp[i]));
        let nd = self.fact.z.ncols();
        let max_iter = 10 * n.max(1);

        // unconstrained minimum-norm minimizer as the starting guess
        let d0 = -(&self.g_free.0 * &h_red);
        let viol = (0..nb).map(|k| b_rows[k] - self.rows.row(k).dot(&d0.transpose())).fold(0.0, f64::max);
        let bscale = b_rows.amax().max(1.0);

        let mut iterations = 0;
        let (start, working) = if viol <= 1e-13 * bscale {
            (d0, Vec::new())
        } else {
            // phase 1: minimize t subject to rows·d + t ≥ b, t ≥ 0
            let mut rows1 = Matrix::zeros(nb + 1, nd + 1);
            rows1.view_mut((0, 0), (nb, nd)).copy_from(&self.rows);
            for k in 0..=nb {
                rows1[(k, nd)] = 1.0;
            }
            let mut b1 = Vector::zeros(nb + 1);
            b1.rows_mut(0, nb).copy_from(&b_rows);
            let g1 = Matrix::zeros(nd + 1, nd + 1);
            let mut h1 = Vector::zeros(nd + 1);
            h1[nd] = 1.0;
            let mut z0 = Vector::zeros(nd + 1);
            z0.rows_mut(0, nd).copy_from(&d0);
            z0[nd] = viol;
            let phase1 =
                Inner { g: &g1, h: &h1, rows: &rows1, b: &b1, tol: self.tol, free: None }.run(z0, Vec::new(), max_iter);
            iterations += phase1.iterations;
            match phase1.status {
                QpStatus::Optimal => {}
                QpStatus::MaxIterations => return Ok(give_up(QpStatus::MaxIterations, iterations, xp, 0.0)),
                _ => return Err(Error::Numerical("phase-1 problem unbounded".into())),
            }
            let t = phase1.d[nd];
            if t > 1e-9 * bscale {
                let mut x = xp.clone();
                x += &self.fact.z * phase1.d.rows(0, nd);
                return Ok(give_up(QpStatus::Infeasible, iterations, x, t));
            }
            let d = phase1.d.rows(0, nd).into_owned();
            let working = phase1.working.into_iter().filter(|&k| k < nb).collect();
            (d, working)
        };

        let inner =
            Inner { g: &self.g, h: &h_red, rows: &self.rows, b: &b_rows, tol: self.tol, free: Some(&self.g_free) };
        let res = inner.run(start, working, max_iter.saturating_sub(iterations).max(1));
        iterations += res.iterations;
        let mut x = &xp + &self.fact.z * &res.d;
        if res.status != QpStatus::Optimal {
            return Ok(give_up(res.status, iterations, x, 0.0));
        }
        // active bounds hold with equality; drop the roundoff
        for &k in &res.working {
            x[self.nonneg_idx[k]] = 0.0;
        }

        let mut mu = Vector::zeros(nb);
        for (k, &row) in res.working.iter().enumerate() {
            mu[row] += res.mu[k];
        }
        let mut r = &self.h * &x + c;
        for (k, &i) in self.nonneg_idx.iter().enumerate() {
            r[i] -= mu[k];
        }
        let lambda = &self.fact.at_pinv * r;
        let kkt = kkt_report(&qp, &x, &lambda, &mu);
        let kkt_residual = kkt.max();
        if kkt_residual > KKT_TOL {
            return Err(Error::Numerical(format!("active-set solution fails the KKT check ({kkt:?})")));
        }
        let mut active_bounds: Vec<usize> = res.working.iter().map(|&k| self.nonneg_idx[k]).collect();
        active_bounds.sort_unstable();
        Ok(QpSolution {
            objective: qp.objective(&x),
            x,
            eq_duals: lambda,
            bound_duals: mu,
            kkt,
            kkt_residual,
            status: QpStatus::Optimal,
            iterations,
            active_bounds,
            infeasibility: 0.0,
        })
    }
}

/// Solve a QP from scratch.
pub fn solve_qp(qp: &QuadraticProgram) -> Result<QpSolution> {
    QpSolver::new(&qp.h, &qp.a_eq, &qp.nonneg_idx)?.solve(&qp.c, &qp.b_eq)
}

//! Random QP instances with a planted optimum and an independent
//! first-order oracle.

use ddpc_core::linalg::{Matrix, Vector};
use ddpc_core::qp::QuadraticProgram;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gauss(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

/// Random instance with a planted KKT point, so it is bounded and its
/// optimal value is known: `c = −H x* + Aᵀλ + μ`.
pub struct Planted {
    pub qp: QuadraticProgram,
    pub x_star: Vector,
}

pub fn planted(rng: &mut ChaCha8Rng, n: usize) -> Planted {
    let rank = rng.random_range((n / 2).max(1)..=n);
    let g = gauss(rng, rank, n);
    let h = g.transpose() * g;
    let h = (&h + h.transpose()) * 0.5;
    let m = rng.random_range(0..=n / 3);
    let a = gauss(rng, m, n);
    let nonneg: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    let mut x = gauss(rng, n, 1).column(0).into_owned();
    let mut mu = Vector::zeros(n);
    for &i in &nonneg {
        if rng.random_bool(0.4) {
            x[i] = 0.0;
            mu[i] = rng.random_range(0.0..2.0);
        } else {
            x[i] = x[i].abs() + 0.1;
        }
    }
    let lambda = gauss(rng, m, 1).column(0).into_owned();
    let c = -(&h * &x) + a.transpose() * lambda + mu;
    let b = &a * &x;
    Planted { qp: QuadraticProgram::new(h, c, a, b, nonneg).unwrap(), x_star: x }
}

pub fn project(x: &mut Vector, idx: &[usize]) {
    for &i in idx {
        x[i] = x[i].max(0.0);
    }
}

/// Independent first-order oracle: ADMM splitting `x = z`, with the
/// equalities kept in the x-step and the bounds handled by projecting z.
/// The penalty adapts to balance primal and dual residuals. Shares nothing
/// with the active-set solver.
pub fn projection_oracle(qp: &QuadraticProgram) -> Vector {
    let (n, m) = (qp.n(), qp.a_eq.nrows());
    let factor = |rho: f64| {
        let mut kkt = Matrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(&qp.h + rho * Matrix::identity(n, n)));
        kkt.view_mut((0, n), (n, m)).copy_from(&qp.a_eq.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&qp.a_eq);
        // nonsingular: H + ρI ≻ 0 and the random A has full row rank
        kkt.lu().try_inverse().expect("KKT matrix of the oracle is singular")
    };
    let mut rho = qp.h.amax().max(1.0).sqrt();
    let mut kinv = factor(rho);
    let (mut z, mut u) = (Vector::zeros(n), Vector::zeros(n));
    let mut rhs = Vector::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(&qp.b_eq);
    for it in 1..=100_000 {
        rhs.rows_mut(0, n).copy_from(&(rho * (&z - &u) - &qp.c));
        let x = (&kinv * &rhs).rows(0, n).into_owned();
        let mut zn = &x + &u;
        project(&mut zn, &qp.nonneg_idx);
        u += &x - &zn;
        let primal = (&x - &zn).amax() / x.amax().max(1.0);
        let dual = rho * (&zn - &z).amax() / qp.c.amax().max(1.0);
        z = zn;
        if primal < 1e-14 && dual < 1e-14 {
            break;
        }
        if it % 100 == 0 {
            let ratio = (primal.max(1e-300) / dual.max(1e-300)).sqrt().clamp(1e-2, 1e2);
            if !(0.2..=5.0).contains(&ratio) {
                rho *= ratio;
                u /= ratio;
                kinv = factor(rho);
            }
        }
    }
    // z satisfies the bounds exactly; a tiny affine correction restores Ax = b
    if m > 0 {
        let gram = (&qp.a_eq * qp.a_eq.transpose()).cholesky().expect("A has full row rank");
        z += qp.a_eq.transpose() * gram.solve(&(&qp.b_eq - &qp.a_eq * &z));
    }
    z
}

/// KKT conditions recomputed from scratch, in the sign convention
/// `Hx + c − Aᵀλ − μ = 0`.
pub fn independent_kkt(qp: &QuadraticProgram, x: &Vector, lambda: &Vector, mu_full: &Vector) -> f64 {
    let grad = &qp.h * x + &qp.c;
    let scale = grad.amax().max(qp.c.amax()).max(1.0);
    let mut worst = (grad - qp.a_eq.transpose() * lambda - mu_full).amax() / scale;
    worst = worst.max((&qp.a_eq * x - &qp.b_eq).amax() / qp.b_eq.amax().max(1.0));
    for &i in &qp.nonneg_idx {
        worst = worst.max(-x[i]).max(-mu_full[i] / scale);
        worst = worst.max((x[i] * mu_full[i]).abs() / (scale * x.amax().max(1.0)));
    }
    worst
}

pub fn full_mu(qp: &QuadraticProgram, bound_duals: &Vector) -> Vector {
    let mut mu = Vector::zeros(qp.n());
    for (k, &i) in qp.nonneg_idx.iter().enumerate() {
        mu[i] = bound_duals[k];
    }
    mu
}

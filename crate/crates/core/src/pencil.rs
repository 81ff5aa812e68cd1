//! Matrix-pencil analysis: regularity, quasi-Weierstraß form via Wong
//! sequences, and PBH-style R-controllability / R-observability tests.

use std::f64::consts::TAU;

use log::debug;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_laplacian, DescriptorSystem, GridModel};
use crate::linalg::{hstack, shifted_pencil, Complex64, DetEval, Matrix, RankDecision, Tolerance};

/// Number of random evaluation points used by [`is_regular`].
pub const REGULARITY_SAMPLES: usize = 8;
/// Seed of the sampling generator; fixed so results are reproducible.
pub const REGULARITY_SEED: u64 = 0x005e_ed0f_9e11;
/// Relative tolerance on the quasi-Weierstraß reconstruction residuals.
pub const QW_RTOL: f64 = 1e-9;

const MAX_DOUBLINGS: usize = 64;

fn check_square_pair(e: &Matrix, a: &Matrix) -> Result<()> {
    if !e.is_square() || e.shape() != a.shape() {
        return Err(Error::dimension(
            "pencil (E, A)",
            "two square matrices of equal size",
            format!("{:?} and {:?}", e.shape(), a.shape()),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityCheck {
    pub regular: bool,
    pub witness: Option<Complex64>,
    pub det: Option<DetEval>,
}

/// Sample `det(λE − A)` at [`REGULARITY_SAMPLES`] points on the circle of
/// radius `1 + ‖A‖/‖E‖`; the first sample with a numerically nonzero
/// determinant certifies regularity.
pub fn is_regular(e: &Matrix, a: &Matrix) -> Result<RegularityCheck> {
    check_square_pair(e, a)?;
    let ne = e.norm();
    let radius = 1.0 + if ne > 0.0 { a.norm() / ne } else { a.norm() };
    let mut rng = ChaCha8Rng::seed_from_u64(REGULARITY_SEED);
    for _ in 0..REGULARITY_SAMPLES {
        let phi: f64 = rng.random_range(0.0..TAU);
        let lambda = Complex64::from_polar(radius, phi);
        let det = DetEval::of(&shifted_pencil(e, a, lambda));
        if det.is_nonzero() {
            return Ok(RegularityCheck { regular: true, witness: Some(lambda), det: Some(det) });
        }
    }
    Ok(RegularityCheck { regular: false, witness: None, det: None })
}

/// Certificate produced by the diagonal-dominance argument.
#[derive(Clone, Debug, PartialEq)]
pub struct DominanceWitness {
    pub lambda0: f64,
    pub lambda: Complex64,
    /// The perturbed Laplacian `L + blkdiag(λ₀²M − λ₀D, 0)`.
    pub perturbed_laplacian: Matrix,
    /// Rows in which dominance is strict.
    pub strict_rows: Vec<usize>,
    pub det: DetEval,
}

/// Weak diagonal dominance in every row plus the list of strict rows.
pub fn diagonal_dominance(m: &Matrix) -> (bool, Vec<usize>) {
    let mut weak = true;
    let mut strict = Vec::new();
    for i in 0..m.nrows() {
        let diag = m[(i, i)].abs();
        let off: f64 = (0..m.ncols()).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        let slack = 1e-12 * diag.max(off);
        if diag + slack < off {
            weak = false;
        } else if diag > off + slack {
            strict.push(i);
        }
    }
    (weak, strict)
}

/// Perturbed Laplacian for a given `λ₀`.
pub fn perturbed_laplacian(grid: &GridModel, lambda0: f64) -> Matrix {
    let mut l = build_laplacian(grid);
    for (i, gen) in grid.generators().iter().enumerate() {
        l[(i, i)] += lambda0 * lambda0 * gen.inertia - lambda0 * gen.damping;
    }
    l
}

/// Regularity witness from the dominance argument.
///
/// With `λ = 1 − τλ₀` one has `det(λE − A) = ±τ^{n+g} det(L + blkdiag(λ₀²M −
/// λ₀D, 0))`. Since the grid is connected, the perturbed Laplacian is
/// irreducible, so weak dominance everywhere plus one strict row makes it
/// invertible. `λ₀` is doubled from 1 until that holds.
pub fn regularity_witness_by_dominance(grid: &GridModel, sys: &DescriptorSystem) -> Result<DominanceWitness> {
    let mut lambda0 = 1.0;
    for _ in 0..MAX_DOUBLINGS {
        let lt = perturbed_laplacian(grid, lambda0);
        let (weak, strict_rows) = diagonal_dominance(&lt);
        if weak && !strict_rows.is_empty() {
            let lambda = Complex64::new(1.0 - grid.tau() * lambda0, 0.0);
            let det = DetEval::of(&shifted_pencil(&sys.e, &sys.a, lambda));
            if !det.is_nonzero() {
                return Err(Error::Numerical(format!(
                    "dominance holds at λ₀ = {lambda0} but det(λE − A) is numerically zero (ratio {:.3e})",
                    det.hadamard_ratio
                )));
            }
            debug!("dominance witness λ₀ = {lambda0}, λ = {lambda}");
            return Ok(DominanceWitness { lambda0, lambda, perturbed_laplacian: lt, strict_rows, det });
        }
        lambda0 *= 2.0;
    }
    Err(Error::Numerical(format!("no diagonally dominant perturbation within {MAX_DOUBLINGS} doublings")))
}

/// Rank decisions taken while iterating the Wong sequences.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WongDiagnostics {
    pub v_steps: Vec<RankDecision>,
    pub w_steps: Vec<RankDecision>,
    pub complement: Option<RankDecision>,
}

impl WongDiagnostics {
    /// Smallest singular-value gap over all decisions that dropped something.
    pub fn min_gap(&self) -> f64 {
        self.v_steps
            .iter()
            .chain(&self.w_steps)
            .chain(&self.complement)
            .map(RankDecision::gap)
            .fold(f64::INFINITY, f64::min)
    }
}

/// `S E P = blkdiag(I_q, N)`, `S A P = blkdiag(A1, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiWeierstrass {
    pub s_mat: Matrix,
    pub p_mat: Matrix,
    pub p_inv: Matrix,
    pub a1: Matrix,
    pub n_mat: Matrix,
    pub q: usize,
    pub s: usize,
    pub diagnostics: WongDiagnostics,
}

impl QuasiWeierstrass {
    pub fn nx(&self) -> usize {
        self.p_mat.nrows()
    }
}

/// Quasi-Weierstraß decomposition from the limits of the Wong sequences
/// `V_{k+1} = A⁻¹(E V_k)` (from `V_0 = Rⁿ`) and `W_{k+1} = E⁻¹(A W_k)` (from
/// `W_0 = {0}`). The nilpotency index equals the number of strict steps of
/// the `W` sequence, with `s = 1` when it has none.
pub fn quasi_weierstrass(e: &Matrix, a: &Matrix, tol: &Tolerance) -> Result<QuasiWeierstrass> {
    check_square_pair(e, a)?;
    let nx = e.nrows();
    let mut diag = WongDiagnostics::default();

    let mut v = Matrix::identity(nx, nx);
    loop {
        let (next, d) = tol.preimage(a, &(e * &v));
        diag.v_steps.push(d);
        let done = next.ncols() == v.ncols();
        v = next;
        if done || diag.v_steps.len() > nx + 1 {
            break;
        }
    }

    let mut w = Matrix::zeros(nx, 0);
    let mut w_strict = 0;
    loop {
        let (next, d) = tol.preimage(e, &(a * &w));
        diag.w_steps.push(d);
        if next.ncols() == w.ncols() {
            break;
        }
        w_strict += 1;
        w = next;
        if w_strict > nx {
            break;
        }
    }

    let q = v.ncols();
    if q + w.ncols() != nx {
        return Err(Error::SingularPencil(format!("Wong limits have dimensions {q} + {} ≠ {nx}", w.ncols())));
    }
    let p_mat = hstack(&[&v, &w]);
    let pr = tol.rank(&p_mat);
    diag.complement = Some(pr);
    if pr.rank < nx {
        return Err(Error::SingularPencil("Wong limits are not complementary".into()));
    }
    let left = hstack(&[&(e * &v), &(a * &w)]);
    let s_mat = left.try_inverse().ok_or_else(|| Error::SingularPencil("[E V, A W] is singular".into()))?;
    let p_inv = p_mat.clone().try_inverse().ok_or_else(|| Error::Numerical("P is singular".into()))?;

    let sep = &s_mat * e * &p_mat;
    let sap = &s_mat * a * &p_mat;
    let nn = nx - q;
    let a1 = sap.view((0, 0), (q, q)).into_owned();
    let n_mat = sep.view((q, q), (nn, nn)).into_owned();

    let mut want_e = Matrix::zeros(nx, nx);
    want_e.view_mut((0, 0), (q, q)).fill_with_identity();
    want_e.view_mut((q, q), (nn, nn)).copy_from(&n_mat);
    let mut want_a = Matrix::zeros(nx, nx);
    want_a.view_mut((0, 0), (q, q)).copy_from(&a1);
    want_a.view_mut((q, q), (nn, nn)).fill_with_identity();
    let re = (&sep - &want_e).norm() / e.norm().max(1.0);
    let ra = (&sap - &want_a).norm() / a.norm().max(1.0);
    if re > QW_RTOL || ra > QW_RTOL {
        return Err(Error::Numerical(format!("quasi-Weierstraß residuals too large: E {re:.3e}, A {ra:.3e}")));
    }

    let s = w_strict.max(1);
    debug!("quasi-Weierstraß: q = {q}, s = {s}, min gap {:.3e}", diag.min_gap());
    Ok(QuasiWeierstrass { s_mat, p_mat, p_inv, a1, n_mat, q, s, diagnostics: diag })
}

/// Eigenvalues of `A1`, i.e. the finite generalized eigenvalues of `(E, A)`.
pub fn finite_spectrum_of(qw: &QuasiWeierstrass) -> Vec<Complex64> {
    if qw.q == 0 {
        return Vec::new();
    }
    let mut ev: Vec<Complex64> = qw.a1.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    ev
}

pub fn finite_spectrum(e: &Matrix, a: &Matrix, tol: &Tolerance) -> Result<Vec<Complex64>> {
    Ok(finite_spectrum_of(&quasi_weierstrass(e, a, tol)?))
}

/// Outcome of a PBH-type rank test over the finite spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTest {
    pub holds: bool,
    /// Eigenvalue with the smallest rank gap, and that decision.
    pub tightest: Option<(Complex64, RankDecision)>,
    /// First eigenvalue at which the rank dropped.
    pub failure: Option<Complex64>,
}

fn rank_test(
    spectrum: &[Complex64],
    expected: usize,
    tol: &Tolerance,
    build: impl Fn(Complex64) -> DMatrix<Complex64>,
) -> RankTest {
    let mut out = RankTest { holds: true, tightest: None, failure: None };
    for &lambda in spectrum {
        let d = tol.rank(&build(lambda));
        if d.rank < expected && out.failure.is_none() {
            out.holds = false;
            out.failure = Some(lambda);
        }
        let tighter = match &out.tightest {
            None => true,
            Some((_, t)) => match (d.smallest_kept, t.smallest_kept) {
                (Some(a), Some(b)) => a < b,
                (None, _) => true,
                _ => false,
            },
        };
        if tighter {
            out.tightest = Some((lambda, d));
        }
    }
    out
}

fn complex_hcat(blocks: &[DMatrix<Complex64>]) -> DMatrix<Complex64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), b.shape()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// `rank [λE − A, B, F] = n` at every finite eigenvalue.
pub fn r_controllability(
    e: &Matrix,
    a: &Matrix,
    b: &Matrix,
    f: &Matrix,
    spectrum: &[Complex64],
    tol: &Tolerance,
) -> RankTest {
    let bf = crate::linalg::to_complex(&hstack(&[b, f]));
    rank_test(spectrum, e.nrows(), tol, |l| complex_hcat(&[shifted_pencil(e, a, l), bf.clone()]))
}

/// `rank [λE − A; C] = n` at every finite eigenvalue.
pub fn r_observability(e: &Matrix, a: &Matrix, c: &Matrix, spectrum: &[Complex64], tol: &Tolerance) -> RankTest {
    let ct = crate::linalg::to_complex(&c.transpose());
    rank_test(spectrum, e.nrows(), tol, |l| complex_hcat(&[shifted_pencil(e, a, l).transpose(), ct.clone()]))
}

pub fn is_r_controllable(e: &Matrix, a: &Matrix, b: &Matrix, f: &Matrix, tol: &Tolerance) -> Result<bool> {
    let spec = finite_spectrum(e, a, tol)?;
    Ok(r_controllability(e, a, b, f, &spec, tol).holds)
}

pub fn is_r_observable(e: &Matrix, a: &Matrix, c: &Matrix, tol: &Tolerance) -> Result<bool> {
    let spec = finite_spectrum(e, a, tol)?;
    Ok(r_observability(e, a, c, &spec, tol).holds)
}

/// Everything `analyze` reports about a descriptor system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PencilReport {
    pub regular: bool,
    pub witness_lambda: Option<Complex64>,
    pub witness_det_ratio: Option<f64>,
    pub q: usize,
    pub s: usize,
    pub r_controllable: bool,
    pub r_observable: bool,
    pub finite_eigenvalues: Vec<Complex64>,
    pub rank_rtol: f64,
    /// Smallest singular-value gap among the Wong-sequence rank decisions.
    pub wong_min_gap: f64,
    pub controllability_tightest: Option<f64>,
    pub observability_tightest: Option<f64>,
}

/// Full analysis; a non-regular pencil yields a report with `regular = false`
/// and no further invariants.
pub fn analyze(sys: &DescriptorSystem, tol: &Tolerance) -> Result<(PencilReport, Option<QuasiWeierstrass>)> {
    let reg = is_regular(&sys.e, &sys.a)?;
    let mut report = PencilReport {
        regular: reg.regular,
        witness_lambda: reg.witness,
        witness_det_ratio: reg.det.map(|d| d.hadamard_ratio),
        q: 0,
        s: 0,
        r_controllable: false,
        r_observable: false,
        finite_eigenvalues: Vec::new(),
        rank_rtol: tol.rank_rtol,
        wong_min_gap: f64::INFINITY,
        controllability_tightest: None,
        observability_tightest: None,
    };
    if !reg.regular {
        return Ok((report, None));
    }
    let qw = quasi_weierstrass(&sys.e, &sys.a, tol)?;
    let spectrum = finite_spectrum_of(&qw);
    let ctrb = r_controllability(&sys.e, &sys.a, &sys.b, &sys.f, &spectrum, tol);
    let obsv = r_observability(&sys.e, &sys.a, &sys.c, &spectrum, tol);
    report.q = qw.q;
    report.s = qw.s;
    report.r_controllable = ctrb.holds;
    report.r_observable = obsv.holds;
    report.wong_min_gap = qw.diagnostics.min_gap();
    report.controllability_tightest = ctrb.tightest.and_then(|(_, d)| d.smallest_kept);
    report.observability_tightest = obsv.tightest.and_then(|(_, d)| d.smallest_kept);
    report.finite_eigenvalues = spectrum;
    Ok((report, Some(qw)))
}

/// Spectral radius of `A1` excluding eigenvalues within `1e-9` of the
/// angle-drift eigenvalue 1 (uniform angle shift is neutral, not unstable).
pub fn dynamic_spectral_radius(qw: &QuasiWeierstrass) -> f64 {
    drift_free_spectral_radius(&qw.a1)
}

/// Spectral radius of a square matrix, ignoring eigenvalues at 1.
pub fn drift_free_spectral_radius(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .filter(|l| (*l - Complex64::new(1.0, 0.0)).norm() > 1e-9)
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;

    #[test]
    fn identity_pencil_is_regular() {
        let r = is_regular(&Matrix::identity(3, 3), &Matrix::zeros(3, 3)).unwrap();
        assert!(r.regular);
    }

    #[test]
    fn zero_pencil_is_singular() {
        let r = is_regular(&Matrix::zeros(1, 1), &Matrix::zeros(1, 1)).unwrap();
        assert!(!r.regular);
        assert!(r.witness.is_none());
    }

    #[test]
    fn block_pencil_hand_read() {
        let e = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![0.7, 1.0]));
        let qw = quasi_weierstrass(&e, &a, &Tolerance::default()).unwrap();
        assert_eq!((qw.q, qw.s), (1, 1));
        assert!((qw.a1[(0, 0)] - 0.7).abs() < 1e-12);
        assert!(qw.n_mat[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn index_two_pencil() {
        // E = [[0,1],[0,0]], A = I: N is a 2x2 Jordan block, s = 2
        let e = Matrix::from_row_slice(2, 2, &[0., 1., 0., 0.]);
        let qw = quasi_weierstrass(&e, &Matrix::identity(2, 2), &Tolerance::default()).unwrap();
        assert_eq!((qw.q, qw.s), (0, 2));
    }

    #[test]
    fn singular_pencil_rejected() {
        let e = Matrix::from_row_slice(2, 2, &[1., 0., 0., 0.]);
        let a = Matrix::from_row_slice(2, 2, &[1., 0., 0., 0.]);
        assert!(quasi_weierstrass(&e, &a, &Tolerance::default()).is_err());
    }

    #[test]
    fn pbh_failures() {
        let e = Matrix::identity(2, 2);
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let tol = Tolerance::default();
        let b = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(!is_r_controllable(&e, &a, &b, &Matrix::zeros(2, 0), &tol).unwrap());
        let c = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(!is_r_observable(&e, &a, &c, &tol).unwrap());
    }
}

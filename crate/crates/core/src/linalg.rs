//! Dense linear-algebra helpers shared by every module.
//!
//! All rank decisions in the crate go through [`Tolerance`], a relative
//! singular-value threshold. Each decision records the singular values on
//! both sides of the cut so callers can report how clear-cut it was.
//!
//! Decompositions are delegated to faer: nalgebra's bidiagonal SVD returns
//! inaccurate factors on a noticeable fraction of singular symmetric
//! matrices (graph Laplacians in particular), which is fatal for rank
//! decisions.

use nalgebra::{Complex, ComplexField, DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type Complex64 = Complex<f64>;

/// Default relative singular-value threshold.
pub const DEFAULT_RANK_RTOL: f64 = 1e-10;

/// Relative singular-value threshold used for every rank decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rank_rtol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rank_rtol: DEFAULT_RANK_RTOL }
    }
}

/// Outcome of a single rank decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankDecision {
    pub rank: usize,
    pub threshold: f64,
    /// Smallest singular value counted towards the rank.
    pub smallest_kept: Option<f64>,
    /// Largest singular value treated as zero.
    pub largest_dropped: Option<f64>,
}

impl RankDecision {
    fn from_sorted(svals: &[f64], threshold: f64) -> Self {
        let rank = svals.iter().take_while(|&&s| s > threshold).count();
        RankDecision {
            rank,
            threshold,
            smallest_kept: rank.checked_sub(1).map(|i| svals[i]),
            largest_dropped: svals.get(rank).copied(),
        }
    }

    /// Ratio between the smallest kept and the largest dropped singular
    /// value; infinite when the decision had nothing on one side.
    pub fn gap(&self) -> f64 {
        match (self.smallest_kept, self.largest_dropped) {
            (Some(k), Some(d)) if d > 0.0 => k / d,
            _ => f64::INFINITY,
        }
    }
}

/// Scalars whose matrices can be handed to the SVD backend.
pub trait SvdScalar: ComplexField<RealField = f64> + Copy {
    #[doc(hidden)]
    fn backend_singular_values(m: &DMatrix<Self>) -> Vec<f64>;
}

impl SvdScalar for f64 {
    fn backend_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
        to_faer(m).singular_values().expect("svd did not converge")
    }
}

impl SvdScalar for Complex64 {
    fn backend_singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
        faer::Mat::<faer::c64>::from_fn(m.nrows(), m.ncols(), |i, j| {
            let z = m[(i, j)];
            faer::c64::new(z.re, z.im)
        })
        .singular_values()
        .expect("svd did not converge")
    }
}

fn to_faer(m: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Real SVD `m = U diag(s) Vᵀ`, `s` descending. `full` returns square `U`
/// and `V`; otherwise both are thin.
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

pub fn svd(m: &Matrix, full: bool) -> Svd {
    let f = to_faer(m);
    let d = if full { f.svd() } else { f.thin_svd() }.expect("svd did not converge");
    let (u, s, v) = (d.U(), d.S(), d.V());
    let s: Vec<f64> = (0..s.dim()).map(|i| s[i]).collect();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let pick = |m: faer::MatRef<'_, f64>, extra: usize| {
        let cols: Vec<usize> = order.iter().copied().chain(s.len()..s.len() + extra).collect();
        Matrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
    };
    Svd { u: pick(u, u.ncols() - s.len()), v: pick(v, v.ncols() - s.len()), s: order.iter().map(|&i| s[i]).collect() }
}

/// Singular values in descending order.
pub fn singular_values<T: SvdScalar>(m: &DMatrix<T>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s = T::backend_singular_values(m);
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Largest singular value (spectral norm); zero for empty matrices.
pub fn spectral_norm<T: SvdScalar>(m: &DMatrix<T>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

impl Tolerance {
    pub fn new(rank_rtol: f64) -> Self {
        Tolerance { rank_rtol }
    }

    /// Threshold relative to the larger of the matrix's own top singular
    /// value and an external reference scale.
    pub fn threshold(&self, sigma_max: f64, reference: f64) -> f64 {
        self.rank_rtol * sigma_max.max(reference)
    }

    pub fn rank<T: SvdScalar>(&self, m: &DMatrix<T>) -> RankDecision {
        self.rank_with_reference(m, 0.0)
    }

    pub fn rank_with_reference<T: SvdScalar>(&self, m: &DMatrix<T>, reference: f64) -> RankDecision {
        let svals = singular_values(m);
        let top = svals.first().copied().unwrap_or(0.0);
        let threshold = self.threshold(top, reference);
        RankDecision::from_sorted(&svals, threshold)
    }

    /// Orthonormal basis (columns) of the kernel of `m`.
    pub fn null_space(&self, m: &Matrix, reference: f64) -> (Matrix, RankDecision) {
        let (rows, cols) = m.shape();
        if cols == 0 {
            return (Matrix::zeros(0, 0), RankDecision::from_sorted(&[], 0.0));
        }
        if rows == 0 {
            return (Matrix::identity(cols, cols), RankDecision::from_sorted(&[], 0.0));
        }
        let d = svd(m, true);
        let top = d.s.first().copied().unwrap_or(0.0);
        let decision = RankDecision::from_sorted(&d.s, self.threshold(top, reference));
        let basis = d.v.columns(decision.rank, cols - decision.rank).into_owned();
        (basis, decision)
    }

    /// Orthonormal basis (columns) of the column space of `m`.
    pub fn range_basis(&self, m: &Matrix, reference: f64) -> (Matrix, RankDecision) {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return (Matrix::zeros(rows, 0), RankDecision::from_sorted(&[], 0.0));
        }
        let d = svd(m, false);
        let top = d.s.first().copied().unwrap_or(0.0);
        let decision = RankDecision::from_sorted(&d.s, self.threshold(top, reference));
        (d.u.columns(0, decision.rank).into_owned(), decision)
    }

    /// Orthonormal basis of the orthogonal complement of the span of the
    /// orthonormal columns `basis` inside R^dim.
    pub fn complement(&self, basis: &Matrix, dim: usize) -> Matrix {
        if basis.ncols() == 0 {
            return Matrix::identity(dim, dim);
        }
        self.null_space(&basis.transpose(), 1.0).0
    }

    /// Basis of the preimage `{x : m x ∈ span(image)}`.
    pub fn preimage(&self, m: &Matrix, image: &Matrix) -> (Matrix, RankDecision) {
        let (q, _) = self.range_basis(image, spectral_norm(m).max(spectral_norm(image)));
        let qc = self.complement(&q, m.nrows());
        if qc.ncols() == 0 {
            return (Matrix::identity(m.ncols(), m.ncols()), RankDecision::from_sorted(&[], 0.0));
        }
        self.null_space(&(qc.transpose() * m), spectral_norm(m))
    }

    /// Minimum-norm least-squares solution of `m x = b` via a truncated SVD.
    pub fn lstsq(&self, m: &Matrix, b: &Vector) -> Vector {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Vector::zeros(m.ncols());
        }
        let d = svd(m, false);
        let thr = self.threshold(d.s.first().copied().unwrap_or(0.0), 0.0);
        let mut x = Vector::zeros(m.ncols());
        for (i, &s) in d.s.iter().enumerate() {
            if s > thr {
                let coeff = d.u.column(i).dot(b) / s;
                x.axpy(coeff, &d.v.column(i), 1.0);
            }
        }
        x
    }
}

/// Determinant together with its Hadamard ratio `|det| / Π ‖row_i‖₂`.
///
/// The ratio lies in [0, 1] and is invariant under row scaling, which makes
/// it a usable "numerically nonzero" test for determinants of matrices with
/// very different row magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetEval {
    pub det: Complex64,
    pub hadamard_ratio: f64,
}

/// Floor on the Hadamard ratio below which a determinant counts as zero.
pub const DET_RATIO_FLOOR: f64 = 1e-12;

impl DetEval {
    pub fn of(m: &DMatrix<Complex64>) -> Self {
        assert!(m.is_square(), "determinant of a non-square matrix");
        if m.nrows() == 0 {
            return DetEval { det: Complex64::new(1.0, 0.0), hadamard_ratio: 1.0 };
        }
        let row_norms: f64 = m.row_iter().map(|r| r.norm()).product();
        let det = m.clone().lu().determinant();
        let hadamard_ratio = if row_norms > 0.0 { det.norm() / row_norms } else { 0.0 };
        DetEval { det, hadamard_ratio }
    }

    /// Product of the row norms the ratio is taken against.
    pub fn scale(&self) -> f64 {
        if self.hadamard_ratio > 0.0 {
            self.det.norm() / self.hadamard_ratio
        } else {
            0.0
        }
    }

    pub fn is_nonzero(&self) -> bool {
        self.hadamard_ratio > DET_RATIO_FLOOR
    }
}

/// `λE − A` as a complex matrix.
pub fn shifted_pencil(e: &Matrix, a: &Matrix, lambda: Complex64) -> DMatrix<Complex64> {
    DMatrix::from_fn(e.nrows(), e.ncols(), |i, j| lambda * e[(i, j)] - Complex64::new(a[(i, j)], 0.0))
}

pub fn to_complex(m: &Matrix) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stack matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[&Matrix]) -> Matrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Place matrices with equal row counts side by side.
pub fn hstack(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(*b);
        c += b.ncols();
    }
    out
}

//! Hankel matrices, persistency of excitation, offline data collection and
//! fundamental-lemma membership checks.

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DescriptorSystem;
use crate::linalg::{Matrix, Tolerance, Vector};
use crate::pencil::QuasiWeierstrass;
use crate::simulator::Plant;

/// Block-Hankel matrix of depth `depth`: column `j` stacks samples
/// `j, j+1, …, j+depth−1`.
#[derive(Clone, Debug, PartialEq)]
pub struct HankelBlock {
    pub depth: usize,
    /// Width of one sample.
    pub k: usize,
    pub data: Matrix,
}

impl HankelBlock {
    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    /// Rows belonging to block rows `[from, from + count)`.
    pub fn block_rows(&self, from: usize, count: usize) -> Matrix {
        self.data.rows(from * self.k, count * self.k).into_owned()
    }
}

pub fn hankel(signal: &[Vector], depth: usize) -> Result<HankelBlock> {
    if depth == 0 {
        return Err(Error::validation("depth", "must be at least 1"));
    }
    if depth > signal.len() {
        return Err(Error::dimension("Hankel depth", format!("≤ {}", signal.len()), depth));
    }
    let k = signal.first().map_or(0, |s| s.len());
    let cols = signal.len() - depth + 1;
    let mut data = Matrix::zeros(k * depth, cols);
    for j in 0..cols {
        for i in 0..depth {
            data.view_mut((i * k, j), (k, 1)).copy_from(&signal[i + j]);
        }
    }
    Ok(HankelBlock { depth, k, data })
}

/// Concatenate per-sample vectors of several equally long signals.
pub fn stack_signals(parts: &[&[Vector]]) -> Vec<Vector> {
    let len = parts.first().map_or(0, |p| p.len());
    (0..len)
        .map(|t| {
            let vals: Vec<f64> = parts.iter().flat_map(|p| p[t].iter().copied()).collect();
            Vector::from_vec(vals)
        })
        .collect()
}

/// Stack the samples of a signal into one long vector.
pub fn vectorize(signal: &[Vector]) -> Vector {
    Vector::from_vec(signal.iter().flat_map(|s| s.iter().copied()).collect())
}

/// Full row rank of the depth-`order` Hankel matrix.
pub fn is_persistently_exciting(signal: &[Vector], order: usize, tol: &Tolerance) -> bool {
    if order == 0 || order > signal.len() {
        return false;
    }
    let k = signal[0].len();
    let cols = signal.len() - order + 1;
    if cols < k * order {
        return false;
    }
    match hankel(signal, order) {
        Ok(h) => tol.rank(&h.data).rank == k * order,
        Err(_) => false,
    }
}

/// Largest order for which the Hankel matrix can have full row rank at all.
pub fn max_feasible_order(k: usize, len: usize) -> usize {
    // need len − order + 1 ≥ k·order
    (len + 1) / (k + 1)
}

/// Highest excitation order, using the monotonicity of the PE property.
pub fn pe_order(signal: &[Vector], tol: &Tolerance) -> usize {
    let Some(first) = signal.first() else {
        return 0;
    };
    let (mut lo, mut hi) = (0, max_feasible_order(first.len(), signal.len()));
    // invariant: PE(lo) holds (vacuous for 0), PE(hi + 1) fails
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if is_persistently_exciting(signal, mid, tol) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Excitation order required by the data-driven OCP with horizon `l`.
pub fn required_pe_order(l: usize, q: usize, s: usize) -> usize {
    l + 2 * (q + s - 1)
}

/// Shortest record for which a `(g+n)`-dimensional excitation can be
/// persistently exciting of order `L + 2(q+s−1)`: the Hankel matrix needs
/// at least as many columns as rows.
pub fn rank_necessary_length(l: usize, q: usize, s: usize, g: usize, n: usize) -> usize {
    (g + n + 1) * required_pe_order(l, q, s) - 1
}

/// Data length from the fundamental lemma applied to the OCP window
/// `L' = L+q+s−1`: `(g+n+1)(L'+q+s) − 1`.
pub fn lemma_data_length(l: usize, q: usize, s: usize, g: usize, n: usize) -> usize {
    (g + n + 1) * (l + 2 * (q + s) - 1) - 1
}

/// Default archive length: both the lemma's hypothesis and the rank
/// requirement hold (428 for the nine-bus case with `L = 20`).
pub fn minimum_data_length(l: usize, q: usize, s: usize, g: usize, n: usize) -> usize {
    rank_necessary_length(l, q, s, g, n).max(lemma_data_length(l, q, s, g, n))
}

/// Which channels are randomized during data collection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Excitation {
    /// Both generation and demand (the default experiment).
    #[default]
    InputsAndDemand,
    /// Generation only; demand stays zero.
    InputsOnly,
}

/// Offline experiment record.
#[derive(Clone, Debug, PartialEq)]
pub struct DataArchive {
    pub u_bar: Vec<Vector>,
    pub w_bar: Vec<Vector>,
    pub y_bar: Vec<Vector>,
    pub seed: u64,
    pub amplitude: f64,
    pub excitation: Excitation,
    pub pe_order_verified: usize,
}

/// Sidecar metadata written next to an archive CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub seed: u64,
    pub samples: usize,
    pub amplitude: f64,
    pub excitation: Excitation,
    pub pe_order_verified: usize,
}

impl DataArchive {
    pub fn len(&self) -> usize {
        self.u_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_bar.is_empty()
    }

    pub fn meta(&self) -> ArchiveMeta {
        ArchiveMeta {
            seed: self.seed,
            samples: self.len(),
            amplitude: self.amplitude,
            excitation: self.excitation,
            pe_order_verified: self.pe_order_verified,
        }
    }

    /// Re-run the experiment from the recorded seed and compare bit-for-bit.
    pub fn is_reproducible(&self, sys: &DescriptorSystem, qw: &QuasiWeierstrass) -> Result<bool> {
        let again = collect_data(sys, qw, self.len(), self.seed, self.amplitude, self.excitation)?;
        Ok(again.u_bar == self.u_bar && again.w_bar == self.w_bar && again.y_bar == self.y_bar)
    }
}

/// Draw the excitation sequences for an experiment.
pub fn excitation_signals(
    g: usize,
    n: usize,
    len: usize,
    seed: u64,
    amplitude: f64,
    excitation: Excitation,
) -> (Vec<Vector>, Vec<Vector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |k: usize| Vector::from_fn(k, |_, _| amplitude * (2.0 * rng.random::<f64>() - 1.0));
    let mut u = Vec::with_capacity(len);
    let mut w = Vec::with_capacity(len);
    for _ in 0..len {
        u.push(draw(g));
        w.push(match excitation {
            Excitation::InputsAndDemand => draw(n),
            Excitation::InputsOnly => Vector::zeros(n),
        });
    }
    (u, w)
}

/// Run the i.i.d. uniform excitation experiment from rest.
pub fn collect_data(
    sys: &DescriptorSystem,
    qw: &QuasiWeierstrass,
    len: usize,
    seed: u64,
    amplitude: f64,
    excitation: Excitation,
) -> Result<DataArchive> {
    if len == 0 {
        return Err(Error::validation("T", "must be at least 1"));
    }
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(Error::validation("amplitude", "must be finite and nonnegative"));
    }
    let (g, n) = (sys.b.ncols(), sys.f.ncols());
    let (u_bar, w_bar) = excitation_signals(g, n, len, seed, amplitude, excitation);
    // zero dynamic coordinates; the algebraic ones follow the inputs
    let mut plant = Plant::new(sys, qw, &Vector::zeros(sys.nx()))?;
    let y_bar = u_bar.iter().zip(&w_bar).map(|(u, w)| plant.step(u, w).1).collect();
    let stacked = stack_signals(&[&u_bar, &w_bar]);
    let pe_order_verified = pe_order(&stacked, &Tolerance::default());
    info!("collected {len} samples (seed {seed}); excitation order {pe_order_verified}");
    Ok(DataArchive { u_bar, w_bar, y_bar, seed, amplitude, excitation, pe_order_verified })
}

/// Hankel matrices of `u`, `w` and `y` over `[0, T−s]` at a common depth.
#[derive(Clone, Debug)]
pub struct DataHankel {
    pub hu: HankelBlock,
    pub hw: HankelBlock,
    pub hy: HankelBlock,
}

impl DataHankel {
    pub fn new(archive: &DataArchive, depth: usize, s: usize) -> Result<Self> {
        let len = archive.len();
        if s == 0 || s > len {
            return Err(Error::validation("s", format!("must lie in 1..={len}")));
        }
        let end = len - s + 1;
        if depth > end {
            return Err(Error::dimension("archive length for Hankel depth", format!("≥ {}", depth + s - 1), len));
        }
        Ok(DataHankel {
            hu: hankel(&archive.u_bar[..end], depth)?,
            hw: hankel(&archive.w_bar[..end], depth)?,
            hy: hankel(&archive.y_bar[..end], depth)?,
        })
    }

    pub fn depth(&self) -> usize {
        self.hu.depth
    }

    pub fn cols(&self) -> usize {
        self.hu.cols()
    }

    /// `[H(u); H(w); H(y)]`.
    pub fn stacked(&self) -> Matrix {
        crate::linalg::vstack(&[&self.hu.data, &self.hw.data, &self.hy.data])
    }
}

/// Caches an orthonormal basis of the data Hankel range so that many
/// candidate windows can be tested cheaply.
#[derive(Clone, Debug)]
pub struct MembershipChecker {
    depth: usize,
    basis: Matrix,
    pub rank: usize,
}

impl MembershipChecker {
    pub fn new(archive: &DataArchive, depth: usize, s: usize, tol: &Tolerance) -> Result<Self> {
        let h = DataHankel::new(archive, depth, s)?;
        let (basis, decision) = tol.range_basis(&h.stacked(), 0.0);
        Ok(MembershipChecker { depth, basis, rank: decision.rank })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Least-squares residual `min_α ‖Hα − v‖₂` of the stacked window `v`.
    pub fn residual(&self, u: &[Vector], w: &[Vector], y: &[Vector]) -> Result<f64> {
        if u.len() != self.depth || w.len() != self.depth || y.len() != self.depth {
            return Err(Error::dimension(
                "candidate window",
                self.depth,
                format!("u {}, w {}, y {}", u.len(), w.len(), y.len()),
            ));
        }
        let v = Vector::from_vec(
            vectorize(u).iter().chain(vectorize(w).iter()).chain(vectorize(y).iter()).copied().collect(),
        );
        if v.len() != self.basis.nrows() {
            return Err(Error::dimension("candidate width", self.basis.nrows(), v.len()));
        }
        let proj = &self.basis * (self.basis.transpose() * &v);
        Ok((v - proj).norm())
    }
}

/// One-shot membership test of a candidate window against the archive.
pub fn check_membership(archive: &DataArchive, u: &[Vector], w: &[Vector], y: &[Vector], s: usize) -> Result<f64> {
    MembershipChecker::new(archive, u.len(), s, &Tolerance::default())?.residual(u, w, y)
}

/// Warn when an archive is too short for the requested excitation order.
pub fn warn_if_short(len: usize, required: usize) {
    if len < required {
        warn!("data length {len} is below the {required} samples needed for full-rank excitation");
    }
}

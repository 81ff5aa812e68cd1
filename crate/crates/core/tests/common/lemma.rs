//! Oracles for the fundamental lemma: fresh simulated windows must lie in
//! the data span, noisy ones must not.

use ddpc_core::behavior::{DataArchive, MembershipChecker};
use ddpc_core::grid::DescriptorSystem;
use ddpc_core::linalg::{Matrix, Tolerance, Vector};
use ddpc_core::pencil::QuasiWeierstrass;
use ddpc_core::simulator::{simulate, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{assert_descriptor, random_vectors};

pub fn perturbed(y: &[Vector], sigma: f64, rng: &mut impl Rng) -> Vec<Vector> {
    y.iter()
        .map(|v| {
            v + Vector::from_fn(v.len(), |_, _| {
                sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            })
        })
        .collect()
}

/// Membership of fresh windows and rejection of noisy ones, from random
/// consistent starting states.
pub fn membership_oracle(
    sys: &DescriptorSystem,
    qw: &QuasiWeierstrass,
    archive: &DataArchive,
    depth: usize,
    windows: usize,
    seed: u64,
) -> (f64, f64) {
    let chk = MembershipChecker::new(archive, depth, qw.s, &Tolerance::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, n) = (sys.b.ncols(), sys.f.ncols());
    let (mut worst_member, mut best_reject) = (0.0f64, f64::INFINITY);
    for _ in 0..windows {
        let x0 = random_vectors(&mut rng, 1, sys.nx(), 1.0).remove(0);
        let u = random_vectors(&mut rng, depth, g, 1.0);
        let w = random_vectors(&mut rng, depth, n, 1.0);
        let t: Trajectory = simulate(sys, qw, &x0, &u, &w).unwrap();
        assert_descriptor(&t, sys);
        worst_member = worst_member.max(chk.residual(&u, &w, &t.y).unwrap());
        let y_noisy = perturbed(&t.y, 1e-2, &mut rng);
        best_reject = best_reject.min(chk.residual(&u, &w, &y_noisy).unwrap());
    }
    (worst_member, best_reject)
}

/// Random regular index-one system built in quasi-Weierstraß form, so that
/// regularity and `s = 1` hold by construction.
pub fn random_descriptor(rng: &mut ChaCha8Rng) -> DescriptorSystem {
    let nx = rng.random_range(2..=6);
    let q = rng.random_range(1..nx);
    let g = rng.random_range(1..=2);
    let n = rng.random_range(0..=1);
    let p = rng.random_range(1..=2);
    let mut gauss = |r: usize, c: usize, s: f64| {
        Matrix::from_fn(r, c, |_, _| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut *rng))
    };
    let well_conditioned = |m: Matrix| Matrix::identity(m.nrows(), m.nrows()) + m;
    let s_inv = well_conditioned(gauss(nx, nx, 0.3));
    let p_inv = well_conditioned(gauss(nx, nx, 0.3));
    let mut a1 = gauss(q, q, 1.0);
    let rho = ddpc_core::pencil::drift_free_spectral_radius(&a1).max(1e-3);
    a1 *= 0.9 / rho;
    let mut e0 = Matrix::zeros(nx, nx);
    let mut a0 = Matrix::identity(nx, nx);
    e0.view_mut((0, 0), (q, q)).fill_with_identity();
    a0.view_mut((0, 0), (q, q)).copy_from(&a1);
    DescriptorSystem::from_matrices(
        &s_inv * e0 * &p_inv,
        &s_inv * a0 * &p_inv,
        gauss(nx, g, 1.0),
        gauss(nx, n, 1.0),
        gauss(p, nx, 1.0),
    )
    .unwrap()
}

//! Calibrates the membership thresholds used by the tests: residuals of
//! fresh plant windows versus the same windows with noisy outputs.
//!
//! cargo run -p ddpc-core --example membership_calibration --release

use ddpc_core::behavior::{collect_data, minimum_data_length, Excitation, MembershipChecker};
use ddpc_core::grid::{build_descriptor, generator_angle_selector, load_grid};
use ddpc_core::linalg::{Tolerance, Vector};
use ddpc_core::pencil::quasi_weierstrass;
use ddpc_core::simulator::simulate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SIGMA: f64 = 1e-2;

fn uniform(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vector> {
    (0..len).map(|_| Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))).collect()
}

fn main() -> ddpc_core::Result<()> {
    let grid = load_grid(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/nine_bus.toml"))?;
    let sys = build_descriptor(&grid, &generator_angle_selector(&grid))?;
    let tol = Tolerance::default();
    let qw = quasi_weierstrass(&sys.e, &sys.a, &tol)?;
    let t = minimum_data_length(20, qw.q, qw.s, grid.g(), grid.n());
    let depth = qw.q + qw.s + 2;

    println!("archive T = {t}, window {depth}, output noise σ = {SIGMA}");
    println!("{:>6}  {:>12}  {:>12}", "seed", "max member", "min noisy");
    let (mut worst, mut best) = (0.0f64, f64::INFINITY);
    for seed in 0..10u64 {
        let archive = collect_data(&sys, &qw, t, seed, 1.0, Excitation::InputsAndDemand)?;
        let chk = MembershipChecker::new(&archive, depth, qw.s, &tol)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (mut hi, mut lo) = (0.0f64, f64::INFINITY);
        for _ in 0..200 {
            let x0 = uniform(&mut rng, 1, sys.nx()).remove(0);
            let (u, w) = (uniform(&mut rng, depth, grid.g()), uniform(&mut rng, depth, grid.n()));
            let traj = simulate(&sys, &qw, &x0, &u, &w)?;
            hi = hi.max(chk.residual(&u, &w, &traj.y)?);
            let noisy: Vec<Vector> = traj
                .y
                .iter()
                .map(|y| {
                    y + Vector::from_fn(y.len(), |_, _| {
                        SIGMA * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                    })
                })
                .collect();
            lo = lo.min(chk.residual(&u, &w, &noisy)?);
        }
        println!("{seed:>6}  {hi:>12.3e}  {lo:>12.3e}");
        worst = worst.max(hi);
        best = best.min(lo);
    }
    println!("overall: members ≤ {worst:.3e}, noisy ≥ {best:.3e}");
    println!(
        "thresholds 1e-8 / 1e-4 leave {:.1} / {:.1} decades of margin",
        (1e-8 / worst).log10(),
        (best / 1e-4).log10()
    );
    Ok(())
}

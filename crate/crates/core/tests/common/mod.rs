#![allow(dead_code)]

pub mod lemma;
pub mod qp_oracle;

use std::path::PathBuf;

use ddpc_core::grid::{
    build_descriptor, generator_angle_selector, load_grid, DescriptorSystem, GeneratorParams, GridModel,
};
use ddpc_core::linalg::{Matrix, Tolerance, Vector};
use ddpc_core::pencil::{quasi_weierstrass, QuasiWeierstrass};
use ddpc_core::schedule::DemandSchedule;
use ddpc_core::simulator::{Trajectory, RESIDUAL_RTOL};
use proptest::prelude::*;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn nine_bus_path() -> PathBuf {
    repo_root().join("configs/nine_bus.toml")
}

pub fn schedule_path() -> PathBuf {
    repo_root().join("configs/nine_bus_schedule.toml")
}

pub fn nine_bus() -> GridModel {
    load_grid(nine_bus_path()).expect("shipped nine-bus config loads")
}

/// Random connected grid: a random spanning tree plus extra edges.
pub fn arb_grid(max_buses: usize) -> impl Strategy<Value = GridModel> {
    (1..=max_buses)
        .prop_flat_map(|n| {
            (
                Just(n),
                1..=n,
                prop::collection::vec((0.0f64..1.0, 0.5f64..20.0), n),
                prop::collection::vec((0..n, 0..n, 0.5f64..20.0), 0..n),
                prop::collection::vec((0.01f64..0.2, 0.1f64..1.0), n),
            )
        })
        .prop_map(|(n, g, tree, extra, gens)| {
            let mut b = Matrix::zeros(n, n);
            for i in 1..n {
                let parent = ((tree[i].0 * i as f64) as usize).min(i - 1);
                b[(i, parent)] = tree[i].1;
                b[(parent, i)] = tree[i].1;
            }
            for (i, j, v) in extra {
                if i != j {
                    b[(i, j)] = v;
                    b[(j, i)] = v;
                }
            }
            let gens = gens[..g].iter().map(|&(inertia, damping)| GeneratorParams { inertia, damping }).collect();
            GridModel::new(b, gens, 0.01).expect("generated grid is valid")
        })
}

pub struct Setup {
    pub grid: GridModel,
    pub sys: DescriptorSystem,
    pub qw: QuasiWeierstrass,
}

/// Nine-bus grid measuring the generator angles.
pub fn nine_bus_setup() -> Setup {
    setup(nine_bus())
}

pub fn setup(grid: GridModel) -> Setup {
    let sys = build_descriptor(&grid, &generator_angle_selector(&grid)).unwrap();
    let qw = quasi_weierstrass(&sys.e, &sys.a, &Tolerance::default()).unwrap();
    Setup { grid, sys, qw }
}

pub fn schedule(grid: &GridModel) -> DemandSchedule {
    DemandSchedule::load(schedule_path(), grid).unwrap()
}

/// Every trajectory a test produces goes through this check.
pub fn assert_descriptor(traj: &Trajectory, sys: &DescriptorSystem) {
    let (d, o) = traj.residuals(sys).expect("trajectory carries states");
    assert!(d <= RESIDUAL_RTOL && o <= RESIDUAL_RTOL, "descriptor residual {d:.3e}, output residual {o:.3e}");
}

pub fn random_vectors(rng: &mut impl rand::Rng, len: usize, dim: usize, amp: f64) -> Vec<Vector> {
    (0..len).map(|_| Vector::from_fn(dim, |_, _| amp * (2.0 * rng.random::<f64>() - 1.0))).collect()
}

/// Nine-bus archive of the minimum admissible length for `L = 20`.
pub fn archive(c: &Setup, seed: u64) -> ddpc_core::behavior::DataArchive {
    use ddpc_core::behavior::{collect_data, minimum_data_length, Excitation};
    let t = minimum_data_length(20, c.qw.q, c.qw.s, c.grid.g(), c.grid.n());
    collect_data(&c.sys, &c.qw, t, seed, 1.0, Excitation::InputsAndDemand).unwrap()
}

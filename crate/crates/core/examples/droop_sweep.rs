//! Tuning sweep behind `droop::DEFAULT_GAIN`.
//!
//! cargo run -p ddpc-core --example droop_sweep --release

use ddpc_core::droop::{best_gain, tuning_sweep, DEFAULT_GAIN};
use ddpc_core::grid::{build_descriptor, generator_angle_selector, load_grid};
use ddpc_core::linalg::Tolerance;
use ddpc_core::metrics::DEFAULT_THRESHOLD;
use ddpc_core::pencil::quasi_weierstrass;
use ddpc_core::schedule::DemandSchedule;
use ddpc_core::setpoint::EqualSharing;

fn main() -> ddpc_core::Result<()> {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let grid = load_grid(format!("{root}/nine_bus.toml"))?;
    let schedule = DemandSchedule::load(format!("{root}/nine_bus_schedule.toml"), &grid)?;
    let sys = build_descriptor(&grid, &generator_angle_selector(&grid))?;
    let qw = quasi_weierstrass(&sys.e, &sys.a, &Tolerance::default())?;

    let gains: Vec<f64> = (1..=60).map(|i| 0.1 * i as f64).collect();
    let points = tuning_sweep(&grid, &sys, &qw, &gains, &schedule, 400, &EqualSharing, DEFAULT_THRESHOLD)?;
    println!("{:>5}  {:>8}  {:>9}  {:>9}  {:>5}", "k", "rho", "settling", "peak", "clips");
    for p in &points {
        let settle = p.settling.map_or("-".into(), |s| s.to_string());
        println!(
            "{:>5.1}  {:>8.5}  {:>9}  {:>9.3e}  {:>5}",
            p.gain, p.spectral_radius, settle, p.peak_omega, p.clip_events
        );
    }
    match best_gain(&points) {
        Some(p) => println!("best k = {:.1} (shipped default {DEFAULT_GAIN})", p.gain),
        None => println!("no admissible gain"),
    }
    Ok(())
}

mod common;

use common::{assert_descriptor, nine_bus_setup, schedule};
use ddpc_core::control::{FrequencyController, Observation};
use ddpc_core::droop::*;
use ddpc_core::linalg::Vector;
use ddpc_core::metrics::{compute_metrics, omega_norms, DEFAULT_HOLD, DEFAULT_THRESHOLD};
use ddpc_core::schedule::DemandSchedule;
use ddpc_core::setpoint::{compute_setpoint, EqualSharing};
use ddpc_core::Error;

const STEPS: usize = 400;

#[test]
fn zero_gain_at_the_setpoint_is_constant() {
    let c = nine_bus_setup();
    let s = schedule(&c.grid);
    let demand = s.segments()[0].1.clone();
    let sp = compute_setpoint(&c.grid, &c.sys, &demand, &EqualSharing).unwrap();
    let run = run_droop(
        &c.grid,
        &c.sys,
        &c.qw,
        &DroopConfig::uniform(3, 0.0),
        &DemandSchedule::constant(demand).unwrap(),
        100,
        &EqualSharing,
    )
    .unwrap();
    assert_descriptor(&run.trajectory, &c.sys);
    for x in run.trajectory.x.as_ref().unwrap() {
        assert!((x - &sp.x_s).amax() < 1e-9);
    }
}

#[test]
fn zero_gain_step_never_settles() {
    let c = nine_bus_setup();
    let s = schedule(&c.grid);
    let run = run_droop(&c.grid, &c.sys, &c.qw, &DroopConfig::uniform(3, 0.0), &s, STEPS, &EqualSharing).unwrap();
    assert_descriptor(&run.trajectory, &c.sys);
    let m = compute_metrics(&run.trajectory, &s, &run.setpoints, 3, DEFAULT_THRESHOLD, DEFAULT_HOLD).unwrap();
    assert_eq!(m.segments[0].settling_time, Some(0));
    assert!(m.segments[1..].iter().all(|seg| seg.settling_time.is_none()));
    // without feedback the frequency stays away from zero
    let omega = omega_norms(&run.trajectory, 3).unwrap();
    assert!(omega[240..250].iter().all(|&w| w > 1e-2), "{:?}", &omega[240..250]);
}

#[test]
fn default_droop_keeps_a_frequency_offset() {
    let c = nine_bus_setup();
    let s = schedule(&c.grid);
    let run =
        run_droop(&c.grid, &c.sys, &c.qw, &DroopConfig::uniform(3, DEFAULT_GAIN), &s, STEPS, &EqualSharing).unwrap();
    let m = compute_metrics(&run.trajectory, &s, &run.setpoints, 3, DEFAULT_THRESHOLD, DEFAULT_HOLD).unwrap();
    assert!(m.segments[1..].iter().all(|seg| seg.settling_time.is_none()));
    // but it does reach a quasi-steady state: ω stops moving
    let xs = run.trajectory.x.as_ref().unwrap();
    let drift = (xs[249].rows(0, 3) - xs[229].rows(0, 3)).amax();
    assert!(drift < 1e-4, "{drift:e}");
}

#[test]
fn retargeted_droop_settles() {
    let c = nine_bus_setup();
    let s = schedule(&c.grid);
    let mut cfg = DroopConfig::uniform(3, DEFAULT_GAIN);
    cfg.retarget = true;
    let run = run_droop(&c.grid, &c.sys, &c.qw, &cfg, &s, STEPS, &EqualSharing).unwrap();
    assert_descriptor(&run.trajectory, &c.sys);
    let m = compute_metrics(&run.trajectory, &s, &run.setpoints, 3, DEFAULT_THRESHOLD, DEFAULT_HOLD).unwrap();
    for seg in &m.segments {
        assert!(seg.settling_time.is_some(), "{m:?}");
    }
}

#[test]
fn replay_is_identical() {
    let c = nine_bus_setup();
    let s = schedule(&c.grid);
    let cfg = DroopConfig::uniform(3, DEFAULT_GAIN);
    let a = run_droop(&c.grid, &c.sys, &c.qw, &cfg, &s, 120, &EqualSharing).unwrap();
    let b = run_droop(&c.grid, &c.sys, &c.qw, &cfg, &s, 120, &EqualSharing).unwrap();
    assert_eq!(a.trajectory.u, b.trajectory.u);
    assert_eq!(a.trajectory.x, b.trajectory.x);
}

#[test]
fn negative_commands_are_clipped() {
    let c = nine_bus_setup();
    let sp = compute_setpoint(&c.grid, &c.sys, &schedule(&c.grid).segments()[0].1, &EqualSharing).unwrap();
    let mut ctrl = DroopController::new(&c.grid, DroopConfig::uniform(3, 2.0)).unwrap();
    ctrl.reset(&sp).unwrap();
    let mut x = sp.x_s.clone();
    x[0] = 10.0; // far above p̃ / K
    x[1] = -0.1;
    let d = ctrl.decide(&Observation { t: 3, dynamic_state: &x, demand: &sp.w_s, setpoint: &sp }).unwrap();
    assert_eq!(d.u[0], 0.0);
    assert_eq!(d.u[1], sp.u_s[1] + 0.2);
    assert_eq!(d.u[2], sp.u_s[2]);
    assert_eq!(d.diagnostics.clipped, 1);
    assert_eq!(ctrl.clip_events(), 1);
    assert!(ctrl.law(&x.rows(0, 3).into_owned())[0] < 0.0);
}

#[test]
fn p_tilde_follows_the_config() {
    let c = nine_bus_setup();
    let s = schedule(&c.grid);
    let sp0 = compute_setpoint(&c.grid, &c.sys, &s.segments()[0].1, &EqualSharing).unwrap();
    let sp1 = compute_setpoint(&c.grid, &c.sys, &s.segments()[1].1, &EqualSharing).unwrap();

    let mut plain = DroopController::new(&c.grid, DroopConfig::uniform(3, 1.0)).unwrap();
    plain.reset(&sp0).unwrap();
    plain.on_setpoint_change(&sp1).unwrap();
    assert_eq!(plain.p_tilde(), &sp0.u_s);

    let mut cfg = DroopConfig::uniform(3, 1.0);
    cfg.retarget = true;
    let mut re = DroopController::new(&c.grid, cfg).unwrap();
    re.reset(&sp0).unwrap();
    re.on_setpoint_change(&sp1).unwrap();
    assert_eq!(re.p_tilde(), &sp1.u_s);

    let mut cfg = DroopConfig::uniform(3, 1.0);
    cfg.p_tilde = Some(Vector::from_element(3, 0.5));
    let mut fixed = DroopController::new(&c.grid, cfg).unwrap();
    fixed.reset(&sp0).unwrap();
    assert_eq!(fixed.p_tilde(), &Vector::from_element(3, 0.5));
}

#[test]
fn config_validation() {
    let c = nine_bus_setup();
    let mut cfg = DroopConfig::uniform(3, 1.0);
    cfg.gains[1] = -0.1;
    assert!(matches!(DroopController::new(&c.grid, cfg), Err(Error::Validation { .. })));
    assert!(matches!(DroopController::new(&c.grid, DroopConfig::uniform(2, 1.0)), Err(Error::Dimension { .. })));
    let mut cfg = DroopConfig::uniform(3, 1.0);
    cfg.p_tilde = Some(Vector::zeros(4));
    assert!(matches!(DroopController::new(&c.grid, cfg), Err(Error::Dimension { .. })));
}

#[test]
fn spectral_radius_brackets_stability() {
    let c = nine_bus_setup();
    let rho = |k: f64| closed_loop_spectral_radius(&c.sys, &c.qw, &Vector::from_element(3, k));
    assert!(rho(0.0) <= 1.0 + 1e-12, "open loop is marginally stable");
    assert!(rho(DEFAULT_GAIN) < 1.0);
    assert!(rho(3.5) > 1.0);
}

/// The shipped default must stay the optimum of the documented sweep.
#[test]
fn default_gain_is_the_sweep_optimum() {
    let c = nine_bus_setup();
    let s = schedule(&c.grid);
    let gains: Vec<f64> = (1..=60).map(|k| k as f64 / 10.0).collect();
    let points = tuning_sweep(&c.grid, &c.sys, &c.qw, &gains, &s, STEPS, &EqualSharing, DEFAULT_THRESHOLD).unwrap();
    let best = best_gain(&points).unwrap();
    assert!((best.gain - DEFAULT_GAIN).abs() < 1e-12, "{best:?}");
    assert!(points.iter().filter(|p| p.gain >= 3.0).all(|p| !p.admissible()));
}

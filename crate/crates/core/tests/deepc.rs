mod common;

use std::collections::VecDeque;

use common::{archive, assert_descriptor, nine_bus_setup, schedule, Setup};
use ddpc_core::behavior::{collect_data, Excitation};
use ddpc_core::control::{FrequencyController, Observation};
use ddpc_core::deepc::*;
use ddpc_core::linalg::{Matrix, Vector};
use ddpc_core::metrics::{compute_metrics, DEFAULT_HOLD, DEFAULT_THRESHOLD};
use ddpc_core::setpoint::{compute_setpoint, EqualSharing, Setpoint};
use ddpc_core::simulator::Plant;
use ddpc_core::Error;

fn standard_cfg() -> OcpConfig {
    OcpConfig::standard(3, 3)
}

fn setpoints(c: &Setup) -> (Setpoint, Setpoint) {
    let s = schedule(&c.grid);
    let before = compute_setpoint(&c.grid, &c.sys, &s.segments()[0].1, &EqualSharing).unwrap();
    let after = compute_setpoint(&c.grid, &c.sys, &s.segments()[1].1, &EqualSharing).unwrap();
    (before, after)
}

#[test]
fn layout_dimensions() {
    let c = nine_bus_setup();
    let a = archive(&c, 1);
    let t = a.len();
    let ctrl = DeepcController::new(&c.qw, &a, standard_cfg()).unwrap();
    let lay = ctrl.layout();
    assert_eq!(lay.n_alpha, t - 25);
    assert_eq!(lay.horizon + lay.past, 26, "Hankel depth");
    assert_eq!(lay.past, 6);
    // terminal block: 6 rows per signal sample for u and y
    let (s, e) = lay.block_rows[2];
    assert_eq!(e - s, 6 * (3 + 3));
    assert_eq!(lay.nonneg_idx, (lay.u_offset()..lay.u_offset() + 60).collect::<Vec<_>>());
    assert_eq!(OcpConfig::min_horizon(6, 1), 13);
}

#[test]
fn zero_cost_at_setpoint() {
    let c = nine_bus_setup();
    let a = archive(&c, 1);
    let (sp, _) = setpoints(&c);
    let mut ctrl = DeepcController::new(&c.qw, &a, standard_cfg()).unwrap();
    ctrl.reset(&sp).unwrap();
    let (sol, cost) = ctrl.solve(&sp.w_s, 0).unwrap();
    assert!(cost < 1e-9, "cost {cost:e}");
    assert!(sol.kkt_residual <= 1e-8);
    let (u, y) = ctrl.predicted(&sol.x);
    assert!(u.iter().all(|u| (u - &sp.u_s).amax() < 1e-8));
    assert!(y.iter().all(|y| (y - &sp.y_s).amax() < 1e-8));

    let x = sp.x_s.clone();
    let d = ctrl.decide(&Observation { t: 0, dynamic_state: &x, demand: &sp.w_s, setpoint: &sp }).unwrap();
    assert!((&d.u - &sp.u_s).amax() < 1e-8);
}

#[test]
fn validation_errors() {
    let c = nine_bus_setup();
    let a = archive(&c, 1);
    let short = OcpConfig::scaled(12, 3, 3, 10.0, 1.0);
    assert!(matches!(DeepcController::new(&c.qw, &a, short), Err(Error::Validation { .. })));
    let mut bad = standard_cfg();
    bad.q_weight[(0, 0)] = -1.0;
    assert!(matches!(DeepcController::new(&c.qw, &a, bad), Err(Error::Validation { .. })));

    // PE deficit: 100 samples cannot be persistently exciting of order 32
    let tiny = collect_data(&c.sys, &c.qw, 100, 1, 1.0, Excitation::InputsAndDemand).unwrap();
    match DeepcController::new(&c.qw, &tiny, standard_cfg()) {
        Err(Error::Validation { field, .. }) => assert_eq!(field, "archive"),
        other => panic!("{other:?}"),
    }

    let mut ctrl = DeepcController::new(&c.qw, &a, standard_cfg()).unwrap();
    assert!(matches!(ctrl.assemble(&Vector::zeros(9)), Err(Error::Validation { .. })));
    assert!(ctrl.set_history(VecDeque::new()).is_err());
}

#[test]
fn inconsistent_history_names_the_initial_condition_block() {
    let c = nine_bus_setup();
    let a = archive(&c, 1);
    let (sp, _) = setpoints(&c);
    let mut ctrl = DeepcController::new(&c.qw, &a, standard_cfg()).unwrap();
    ctrl.reset(&sp).unwrap();
    // outputs that jump without any input change are not a system trajectory
    let mut h: VecDeque<_> = ctrl.history().clone();
    h[3].2[0] += 0.5;
    ctrl.set_history(h).unwrap();
    match ctrl.solve(&sp.w_s, 17) {
        Err(Error::Infeasible { t, block, .. }) => {
            assert_eq!(t, 17);
            assert_eq!(block, "initial_condition");
        }
        other => panic!("{other:?}"),
    }
}

/// Drive the loop by hand through a demand step, checking at every step
/// that the predicted trajectory replays through the plant.
#[test]
fn predictions_replay_through_the_plant() {
    let c = nine_bus_setup();
    let a = archive(&c, 2);
    let (sp0, sp1) = setpoints(&c);
    let mut ctrl = DeepcController::new(&c.qw, &a, standard_cfg()).unwrap();
    ctrl.reset(&sp0).unwrap();
    ctrl.on_setpoint_change(&sp1).unwrap();
    let mut plant = Plant::new(&c.sys, &c.qw, &sp0.x_s).unwrap();
    for t in 0..30 {
        let x = plant.dynamic_state();
        let d = ctrl.decide(&Observation { t, dynamic_state: &x, demand: &sp1.w_s, setpoint: &sp1 }).unwrap();
        assert!(d.u.iter().all(|&v| v >= -1e-10));
        let mut replay = plant.clone();
        for (u, y) in d.diagnostics.predicted_u.iter().zip(&d.diagnostics.predicted_y) {
            let (_, y_sim) = replay.step(u, &sp1.w_s);
            assert!((&y_sim - y).amax() <= 1e-6, "t = {t}: {:e}", (&y_sim - y).amax());
        }
        let (_, y) = plant.step(&d.u, &sp1.w_s);
        ctrl.record(&d.u, &sp1.w_s, &y);
    }
}

#[test]
fn applied_input_is_archive_independent() {
    let c = nine_bus_setup();
    let (sp0, sp1) = setpoints(&c);
    let x = sp0.x_s.clone();
    let mut first: Option<Vector> = None;
    for seed in [11, 12, 13, 14, 15] {
        let a = archive(&c, seed);
        let mut ctrl = DeepcController::new(&c.qw, &a, standard_cfg()).unwrap();
        ctrl.reset(&sp0).unwrap();
        ctrl.on_setpoint_change(&sp1).unwrap();
        let u = ctrl.decide(&Observation { t: 50, dynamic_state: &x, demand: &sp1.w_s, setpoint: &sp1 }).unwrap().u;
        match &first {
            None => first = Some(u),
            Some(u0) => assert!((&u - u0).amax() <= 1e-6, "seed {seed}: {:e}", (&u - u0).amax()),
        }
    }
}

#[test]
fn constant_demand_holds_the_setpoint() {
    let c = nine_bus_setup();
    let a = archive(&c, 1);
    let (sp, _) = setpoints(&c);
    let s = ddpc_core::schedule::DemandSchedule::constant(sp.w_s.clone()).unwrap();
    let run = run_deepc(&c.grid, &c.sys, &c.qw, &a, &standard_cfg(), &s, 40, &EqualSharing).unwrap();
    assert_descriptor(&run.trajectory, &c.sys);
    assert!(run.trajectory.y.iter().all(|y| (y - &sp.y_s).amax() < 1e-8));
}

#[test]
fn scenario_settles_and_doubling_q_does_not_slow_it() {
    let c = nine_bus_setup();
    let a = archive(&c, 1);
    let s = schedule(&c.grid);
    let steps = 400;
    let mut settling = Vec::new();
    for q_scale in [10.0, 20.0] {
        let cfg = OcpConfig::scaled(20, 3, 3, q_scale, 1.0);
        let run = run_deepc(&c.grid, &c.sys, &c.qw, &a, &cfg, &s, steps, &EqualSharing).unwrap();
        assert_descriptor(&run.trajectory, &c.sys);
        assert!(run.trajectory.u.iter().all(|u| u.iter().all(|&v| v >= -1e-10)));
        // recursive feasibility: every step solved (the run would have errored)
        assert_eq!(run.diagnostics.len(), steps);
        let last = run.setpoints.last().unwrap();
        assert!((run.trajectory.y.last().unwrap() - &last.y_s).amax() < 1e-3);
        let m = compute_metrics(&run.trajectory, &s, &run.setpoints, 3, DEFAULT_THRESHOLD, DEFAULT_HOLD).unwrap();
        let t: Vec<usize> = m.segments[1..].iter().map(|seg| seg.settling_time.expect("settles")).collect();
        assert!(t.iter().all(|&t| t <= 150), "{t:?}");
        settling.push(t);
    }
    for k in 0..2 {
        assert!(settling[1][k] <= settling[0][k], "{settling:?}");
    }
}

#[test]
fn ridge_is_validated() {
    let mut cfg = standard_cfg();
    cfg.ridge = f64::NAN;
    assert!(cfg.validate(6, 1, 3, 3).is_err());
    cfg.ridge = 0.0;
    cfg.r_weight = Matrix::identity(2, 2);
    assert!(matches!(cfg.validate(6, 1, 3, 3), Err(Error::Dimension { .. })));
}

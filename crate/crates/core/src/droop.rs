//! Proportional droop baseline `p = p̃ − K ω_G`, clipped at zero.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::control::{run_closed_loop, ClosedLoopRun, Decision, FrequencyController, Observation, StepDiagnostics};
use crate::error::{Error, Result};
use crate::grid::{DescriptorSystem, GridModel};
use crate::linalg::{Matrix, Vector};
use crate::pencil::{drift_free_spectral_radius, QuasiWeierstrass};
use crate::schedule::DemandSchedule;
use crate::setpoint::{Setpoint, SharingPolicy};

/// Default droop gain `k` in `K = k·I`: the fastest-settling stable gain of
/// `examples/droop_sweep.rs` (k ∈ {0.1, …, 6.0}) on the shipped nine-bus
/// scenario. Gains from about 2.9 up destabilize the loop.
pub const DEFAULT_GAIN: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroopConfig {
    /// Diagonal of `K`.
    pub gains: Vector,
    /// Fixed offset `p̃`; `None` takes the initial setpoint's `u^s`.
    pub p_tilde: Option<Vector>,
    /// Move `p̃` to the new `u^s` at demand changes (off by default).
    pub retarget: bool,
}

impl DroopConfig {
    pub fn uniform(g: usize, k: f64) -> Self {
        DroopConfig { gains: Vector::from_element(g, k), p_tilde: None, retarget: false }
    }

    pub fn validate(&self, g: usize) -> Result<()> {
        if self.gains.len() != g {
            return Err(Error::dimension("droop gains", g, self.gains.len()));
        }
        if self.gains.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return Err(Error::validation("K", "gains must be finite and nonnegative"));
        }
        if let Some(p) = &self.p_tilde {
            if p.len() != g {
                return Err(Error::dimension("p̃", g, p.len()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DroopController {
    cfg: DroopConfig,
    p_tilde: Vector,
    g: usize,
    clip_events: usize,
}

impl DroopController {
    pub fn new(grid: &GridModel, cfg: DroopConfig) -> Result<Self> {
        cfg.validate(grid.g())?;
        Ok(DroopController {
            p_tilde: cfg.p_tilde.clone().unwrap_or_else(|| Vector::zeros(grid.g())),
            g: grid.g(),
            cfg,
            clip_events: 0,
        })
    }

    pub fn p_tilde(&self) -> &Vector {
        &self.p_tilde
    }

    /// Total number of clipped input components so far.
    pub fn clip_events(&self) -> usize {
        self.clip_events
    }

    /// The droop law for a given frequency deviation, before clipping.
    pub fn law(&self, omega: &Vector) -> Vector {
        &self.p_tilde - self.cfg.gains.component_mul(omega)
    }
}

impl FrequencyController for DroopController {
    fn name(&self) -> &'static str {
        "droop"
    }

    fn reset(&mut self, setpoint: &Setpoint) -> Result<()> {
        self.p_tilde = self.cfg.p_tilde.clone().unwrap_or_else(|| setpoint.u_s.clone());
        self.clip_events = 0;
        Ok(())
    }

    fn on_setpoint_change(&mut self, setpoint: &Setpoint) -> Result<()> {
        if self.cfg.retarget {
            self.p_tilde = setpoint.u_s.clone();
        } else {
            warn!(
                "droop keeps p̃ = {:?}; new balanced dispatch {:?} is not applied (primary control only)",
                self.p_tilde.as_slice(),
                setpoint.u_s.as_slice()
            );
        }
        Ok(())
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Decision> {
        let omega = obs.dynamic_state.rows(0, self.g).into_owned();
        let mut u = self.law(&omega);
        let mut clipped = 0;
        for v in u.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
                clipped += 1;
            }
        }
        if clipped > 0 {
            debug!("t = {}: clipped {clipped} droop inputs at zero", obs.t);
        }
        self.clip_events += clipped;
        Ok(Decision { u, diagnostics: StepDiagnostics { t: obs.t, clipped, ..StepDiagnostics::default() } })
    }

    fn record(&mut self, _u: &Vector, _w: &Vector, _y: &Vector) {}
}

/// Dynamic matrix of the unclipped droop loop in the plant's dynamic
/// coordinates: `A1 − [S B]₁ K Π_ω P₁`.
pub fn closed_loop_matrix(sys: &DescriptorSystem, qw: &QuasiWeierstrass, gains: &Vector) -> Matrix {
    let g = gains.len();
    let sb = (&qw.s_mat * &sys.b).rows(0, qw.q).into_owned();
    let omega_of_z1 = qw.p_mat.view((0, 0), (g, qw.q)).into_owned();
    &qw.a1 - sb * Matrix::from_diagonal(gains) * omega_of_z1
}

/// Spectral radius of the droop loop, ignoring the neutral angle-drift mode.
/// Below 1 means the loop is stable while no input clips.
pub fn closed_loop_spectral_radius(sys: &DescriptorSystem, qw: &QuasiWeierstrass, gains: &Vector) -> f64 {
    drift_free_spectral_radius(&closed_loop_matrix(sys, qw, gains))
}

/// Droop closed loop on a demand schedule.
pub fn run_droop(
    grid: &GridModel,
    sys: &DescriptorSystem,
    qw: &QuasiWeierstrass,
    cfg: &DroopConfig,
    schedule: &DemandSchedule,
    steps: usize,
    sharing: &dyn SharingPolicy,
) -> Result<ClosedLoopRun> {
    let mut ctrl = DroopController::new(grid, cfg.clone())?;
    run_closed_loop(grid, sys, qw, &mut ctrl, schedule, steps, sharing)
}

/// One gain of the tuning sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gain: f64,
    pub spectral_radius: f64,
    /// Worst segment's steps until `ω_G` stays within the threshold of its
    /// own end-of-segment value; `None` if some segment never does.
    pub settling: Option<usize>,
    pub peak_omega: f64,
    pub clip_events: usize,
}

impl SweepPoint {
    pub fn admissible(&self) -> bool {
        self.spectral_radius < 1.0 && self.settling.is_some() && self.clip_events == 0
    }
}

/// Settling of `ω` towards its final value within each `[start, end)`.
fn quasi_steady_settling(omega: &[Vector], bounds: &[(usize, usize)], threshold: f64, hold: usize) -> Option<usize> {
    let mut worst = 0;
    for &(a, b) in bounds {
        let end = &omega[b - 1];
        let dev: Vec<f64> = omega[a..b].iter().map(|w| (w - end).amax()).collect();
        worst = worst.max(crate::metrics::settling_index(&dev, threshold, hold)?);
    }
    Some(worst)
}

/// Run uniform gains `k·I` on a scenario; the default gain is the
/// admissible point with the smallest worst-case settling (ties → smaller k).
#[allow(clippy::too_many_arguments)]
pub fn tuning_sweep(
    grid: &GridModel,
    sys: &DescriptorSystem,
    qw: &QuasiWeierstrass,
    gains: &[f64],
    schedule: &DemandSchedule,
    steps: usize,
    sharing: &dyn SharingPolicy,
    threshold: f64,
) -> Result<Vec<SweepPoint>> {
    let bounds = schedule.bounds(steps);
    gains
        .iter()
        .map(|&k| {
            let cfg = DroopConfig::uniform(grid.g(), k);
            let mut ctrl = DroopController::new(grid, cfg.clone())?;
            let run = run_closed_loop(grid, sys, qw, &mut ctrl, schedule, steps, sharing)?;
            let xs = run.trajectory.x.as_ref().expect("closed loop records states");
            let omega: Vec<Vector> = xs.iter().map(|x| x.rows(0, grid.g()).into_owned()).collect();
            Ok(SweepPoint {
                gain: k,
                spectral_radius: closed_loop_spectral_radius(sys, qw, &cfg.gains),
                settling: quasi_steady_settling(&omega, &bounds, threshold, crate::metrics::DEFAULT_HOLD),
                peak_omega: omega.iter().map(|w| w.amax()).fold(0.0, f64::max),
                clip_events: ctrl.clip_events(),
            })
        })
        .collect()
}

/// Best admissible point of a sweep.
pub fn best_gain(points: &[SweepPoint]) -> Option<&SweepPoint> {
    points.iter().filter(|p| p.admissible()).min_by(|a, b| a.settling.cmp(&b.settling).then(a.gain.total_cmp(&b.gain)))
}

//! Per-segment performance metrics and the side-by-side comparison.

use std::thread;

use serde::Serialize;

use crate::behavior::DataArchive;
use crate::control::ClosedLoopRun;
use crate::deepc::{run_deepc, OcpConfig};
use crate::droop::{run_droop, DroopConfig};
use crate::error::{Error, Result};
use crate::grid::{DescriptorSystem, GridModel};
use crate::pencil::QuasiWeierstrass;
use crate::schedule::DemandSchedule;
use crate::setpoint::{Setpoint, SharingPolicy};
use crate::simulator::Trajectory;

/// Default settling threshold on `‖ω_G‖∞` (per-unit).
pub const DEFAULT_THRESHOLD: f64 = 1e-3;
/// Samples that must stay below the threshold to count as settled.
pub const DEFAULT_HOLD: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentMetrics {
    pub t_start: usize,
    pub t_end: usize,
    /// Steps after `t_start` until `‖ω_G‖∞` stays below the threshold;
    /// `None` when the segment never settles.
    pub settling_time: Option<usize>,
    pub peak_omega: f64,
    pub ise: f64,
    pub effort: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub threshold: f64,
    pub hold: usize,
    pub segments: Vec<SegmentMetrics>,
}

impl RunMetrics {
    pub fn peak_omega(&self) -> f64 {
        self.segments.iter().map(|s| s.peak_omega).fold(0.0, f64::max)
    }
}

/// First `k` with every sample from `k` on below `threshold` and at least
/// `hold` such samples (or the whole window, if it is shorter than `hold`).
pub fn settling_index(omega: &[f64], threshold: f64, hold: usize) -> Option<usize> {
    let mut k = omega.len();
    while k > 0 && omega[k - 1] < threshold {
        k -= 1;
    }
    (omega.len() - k >= hold.min(omega.len())).then_some(k)
}

/// `‖ω_G(t)‖∞` along a trajectory with recorded states.
pub fn omega_norms(traj: &Trajectory, g: usize) -> Result<Vec<f64>> {
    let xs =
        traj.x.as_ref().ok_or_else(|| Error::validation("trajectory", "states are required for frequency metrics"))?;
    Ok(xs.iter().map(|x| x.rows(0, g).amax()).collect())
}

pub fn compute_metrics(
    traj: &Trajectory,
    schedule: &DemandSchedule,
    setpoints: &[Setpoint],
    g: usize,
    threshold: f64,
    hold: usize,
) -> Result<RunMetrics> {
    let bounds = schedule.bounds(traj.len());
    if bounds.len() != setpoints.len() {
        return Err(Error::dimension("setpoints per segment", bounds.len(), setpoints.len()));
    }
    let omega = omega_norms(traj, g)?;
    let xs = traj.x.as_deref().unwrap_or_default();
    let segments = bounds
        .iter()
        .zip(setpoints)
        .map(|(&(a, b), sp)| {
            let w = &omega[a..b];
            SegmentMetrics {
                t_start: a,
                t_end: b,
                settling_time: settling_index(w, threshold, hold),
                peak_omega: w.iter().copied().fold(0.0, f64::max),
                // the full frequency vector, not just its peak entry
                ise: xs[a..b].iter().map(|x| x.rows(0, g).norm_squared()).sum(),
                effort: traj.u[a..b].iter().map(|u| (u - &sp.u_s).norm_squared()).sum(),
            }
        })
        .collect();
    Ok(RunMetrics { threshold, hold, segments })
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub deepc: ClosedLoopRun,
    pub droop: ClosedLoopRun,
    pub deepc_metrics: RunMetrics,
    pub droop_metrics: RunMetrics,
}

impl ComparisonReport {
    /// Human-readable side-by-side table.
    pub fn table(&self) -> String {
        let mut s = String::from(
            "segment  t_start  settle_deepc  settle_droop  peak_deepc  peak_droop  ise_deepc  ise_droop\n",
        );
        let fmt_settle = |v: Option<usize>| v.map_or("unsettled".to_string(), |k| k.to_string());
        for (k, (a, b)) in self.deepc_metrics.segments.iter().zip(&self.droop_metrics.segments).enumerate() {
            s.push_str(&format!(
                "{k:>7}  {:>7}  {:>12}  {:>12}  {:>10.3e}  {:>10.3e}  {:>9.3e}  {:>9.3e}\n",
                a.t_start,
                fmt_settle(a.settling_time),
                fmt_settle(b.settling_time),
                a.peak_omega,
                b.peak_omega,
                a.ise,
                b.ise
            ));
        }
        s
    }
}

/// Run DeePC and droop on the same scenario (concurrently) and tabulate.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    grid: &GridModel,
    sys: &DescriptorSystem,
    qw: &QuasiWeierstrass,
    archive: &DataArchive,
    deepc_cfg: &OcpConfig,
    droop_cfg: &DroopConfig,
    schedule: &DemandSchedule,
    steps: usize,
    sharing: &dyn SharingPolicy,
    threshold: f64,
) -> Result<ComparisonReport> {
    let (deepc, droop) = thread::scope(|scope| {
        let a = scope.spawn(|| run_deepc(grid, sys, qw, archive, deepc_cfg, schedule, steps, sharing));
        let b = scope.spawn(|| run_droop(grid, sys, qw, droop_cfg, schedule, steps, sharing));
        (a.join().expect("deepc run panicked"), b.join().expect("droop run panicked"))
    });
    let (deepc, droop) = (deepc?, droop?);
    let g = grid.g();
    let deepc_metrics = compute_metrics(&deepc.trajectory, schedule, &deepc.setpoints, g, threshold, DEFAULT_HOLD)?;
    let droop_metrics = compute_metrics(&droop.trajectory, schedule, &droop.setpoints, g, threshold, DEFAULT_HOLD)?;
    Ok(ComparisonReport { deepc, droop, deepc_metrics, droop_metrics })
}

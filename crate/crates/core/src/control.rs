//! Controller interface, registry, and the shared closed-loop driver.
//!
//! Controllers are trait objects registered by name, so front ends select
//! them at runtime (`"deepc"`, `"droop"`, or anything registered later).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use log::{error, info};
use serde::Serialize;

use crate::behavior::DataArchive;
use crate::deepc::{DeepcController, OcpConfig};
use crate::droop::{DroopConfig, DroopController};
use crate::error::{Error, Result};
use crate::grid::{DescriptorSystem, GridModel};
use crate::linalg::Vector;
use crate::pencil::QuasiWeierstrass;
use crate::schedule::DemandSchedule;
use crate::setpoint::{compute_setpoint, Setpoint, SharingPolicy};
use crate::simulator::{Plant, Trajectory};

/// What a controller may look at before choosing `u(t)`.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub t: usize,
    /// Dynamic part of the plant state (frequencies and generator angles).
    pub dynamic_state: &'a Vector,
    /// Demand forecast for the horizon (the schedule's current value).
    pub demand: &'a Vector,
    pub setpoint: &'a Setpoint,
}

/// Per-step record of a controller decision.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: usize,
    pub cost: f64,
    pub kkt: f64,
    pub active_bounds: usize,
    pub solve_ms: f64,
    /// Inputs clipped at zero (droop only).
    pub clipped: usize,
    #[serde(skip)]
    pub predicted_u: Vec<Vector>,
    #[serde(skip)]
    pub predicted_y: Vec<Vector>,
}

#[derive(Clone, Debug)]
pub struct Decision {
    pub u: Vector,
    pub diagnostics: StepDiagnostics,
}

pub trait FrequencyController: Send {
    fn name(&self) -> &'static str;

    /// Prepare for a run that starts at rest in `setpoint`.
    fn reset(&mut self, setpoint: &Setpoint) -> Result<()>;

    /// Demand changed; `setpoint` is the new stationary target.
    fn on_setpoint_change(&mut self, setpoint: &Setpoint) -> Result<()>;

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Decision>;

    /// Measured sample `(u(t), w(t), y(t))` after the plant step.
    fn record(&mut self, u: &Vector, w: &Vector, y: &Vector);
}

/// Everything a controller factory may draw on.
#[derive(Clone, Debug)]
pub struct ControllerContext<'a> {
    pub grid: &'a GridModel,
    pub sys: &'a DescriptorSystem,
    pub qw: &'a QuasiWeierstrass,
    pub archive: Option<&'a DataArchive>,
    pub ocp: &'a OcpConfig,
    pub droop: &'a DroopConfig,
}

pub type ControllerFactory =
    Arc<dyn for<'a> Fn(&ControllerContext<'a>) -> Result<Box<dyn FrequencyController>> + Send + Sync>;

/// Name-keyed controller constructors.
#[derive(Clone, Default)]
pub struct ControllerRegistry {
    factories: BTreeMap<&'static str, ControllerFactory>,
}

impl ControllerRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with `deepc` and `droop`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(
            "deepc",
            Arc::new(|ctx: &ControllerContext<'_>| {
                let archive = ctx.archive.ok_or_else(|| Error::validation("archive", "deepc needs a data archive"))?;
                Ok(Box::new(DeepcController::new(ctx.qw, archive, ctx.ocp.clone())?) as Box<dyn FrequencyController>)
            }),
        );
        r.register(
            "droop",
            Arc::new(|ctx: &ControllerContext<'_>| {
                Ok(Box::new(DroopController::new(ctx.grid, ctx.droop.clone())?) as Box<dyn FrequencyController>)
            }),
        );
        r
    }

    pub fn register(&mut self, name: &'static str, factory: ControllerFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, ctx: &ControllerContext<'_>) -> Result<Box<dyn FrequencyController>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::validation("controller", format!("unknown controller `{name}` (known: {})", self.names().join(", ")))
        })?;
        factory(ctx)
    }
}

impl fmt::Debug for ControllerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

/// Output of [`run_closed_loop`].
#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    pub controller: &'static str,
    pub trajectory: Trajectory,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Stationary target of each schedule segment that started in the run.
    pub setpoints: Vec<Setpoint>,
}

/// Measure → decide → apply, starting at rest in the first segment's
/// setpoint. The plant sees the schedule's true demand at every step.
pub fn run_closed_loop(
    grid: &GridModel,
    sys: &DescriptorSystem,
    qw: &QuasiWeierstrass,
    controller: &mut dyn FrequencyController,
    schedule: &DemandSchedule,
    steps: usize,
    sharing: &dyn SharingPolicy,
) -> Result<ClosedLoopRun> {
    let mut setpoints = Vec::new();
    let mut segment = schedule.segment_index(0);
    let mut sp = compute_setpoint(grid, sys, schedule.demand_at(0), sharing)?;
    setpoints.push(sp.clone());
    controller.reset(&sp)?;
    let mut plant = Plant::new(sys, qw, &sp.x_s)?;
    let mut traj = Trajectory::empty(0);
    let mut diagnostics = Vec::with_capacity(steps);

    for t in 0..steps {
        let demand = schedule.demand_at(t).clone();
        let seg = schedule.segment_index(t);
        if seg != segment {
            segment = seg;
            sp = compute_setpoint(grid, sys, &demand, sharing)?;
            info!("t = {t}: demand changed, new setpoint u_s = {:?}", sp.u_s.as_slice());
            setpoints.push(sp.clone());
            controller.on_setpoint_change(&sp)?;
        }
        let x_dyn = plant.dynamic_state();
        let obs = Observation { t, dynamic_state: &x_dyn, demand: &demand, setpoint: &sp };
        let decision = controller.decide(&obs).inspect_err(|e| {
            error!("{} failed at t = {t}: {e}", controller.name());
            error!("state dump: x_dyn = {:?}", x_dyn.as_slice());
            error!("demand = {:?}, u_s = {:?}", demand.as_slice(), sp.u_s.as_slice());
        })?;
        let (x, y) = plant.step(&decision.u, &demand);
        controller.record(&decision.u, &demand, &y);
        traj.push(decision.u, demand, y, Some(x));
        let mut d = decision.diagnostics;
        d.t = t;
        diagnostics.push(d);
    }
    Ok(ClosedLoopRun { controller: controller.name(), trajectory: traj, diagnostics, setpoints })
}

//! Stationary operating points: balanced dispatch, zero frequency deviation,
//! and the angles solving `L θ = injection` in the bus-1 gauge.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{build_laplacian, DescriptorSystem, GridModel};
use crate::linalg::{Tolerance, Vector};

pub const STATIONARITY_RTOL: f64 = 1e-9;

/// How total demand is split among generators.
pub trait SharingPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Generator powers summing to `total`, in generator order.
    fn shares(&self, grid: &GridModel, total: f64) -> Vector;
}

impl fmt::Debug for dyn SharingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SharingPolicy({})", self.name())
    }
}

/// Every generator carries the same share.
#[derive(Clone, Copy, Debug, Default)]
pub struct EqualSharing;

impl SharingPolicy for EqualSharing {
    fn name(&self) -> &'static str {
        "equal"
    }

    fn shares(&self, grid: &GridModel, total: f64) -> Vector {
        Vector::from_element(grid.g(), total / grid.g() as f64)
    }
}

/// Shares proportional to generator inertia.
#[derive(Clone, Copy, Debug, Default)]
pub struct InertiaSharing;

impl SharingPolicy for InertiaSharing {
    fn name(&self) -> &'static str {
        "inertia"
    }

    fn shares(&self, grid: &GridModel, total: f64) -> Vector {
        let m: f64 = grid.generators().iter().map(|g| g.inertia).sum();
        Vector::from_iterator(grid.g(), grid.generators().iter().map(|g| total * g.inertia / m))
    }
}

/// Name-keyed collection of sharing policies.
#[derive(Clone, Default)]
pub struct SharingRegistry {
    policies: BTreeMap<&'static str, Arc<dyn SharingPolicy>>,
}

impl SharingRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding `equal` and `inertia`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(EqualSharing));
        r.register(Arc::new(InertiaSharing));
        r
    }

    /// Add a policy; a policy with the same name is replaced.
    pub fn register(&mut self, policy: Arc<dyn SharingPolicy>) {
        self.policies.insert(policy.name(), policy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SharingPolicy>> {
        self.policies.get(name).cloned().ok_or_else(|| {
            Error::validation("sharing", format!("unknown policy `{name}` (known: {})", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.policies.keys().copied().collect()
    }
}

impl fmt::Debug for SharingRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.policies.keys()).finish()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Setpoint {
    pub u_s: Vector,
    pub w_s: Vector,
    pub y_s: Vector,
    pub x_s: Vector,
}

impl Setpoint {
    /// Scaled `‖E x_s − A x_s − B u_s − F w_s‖∞`.
    pub fn stationarity_residual(&self, sys: &DescriptorSystem) -> f64 {
        sys.residual(&self.x_s, &self.x_s, &self.u_s, &self.w_s)
            / sys.residual_scale(&self.x_s, &self.x_s, &self.u_s, &self.w_s)
    }
}

/// Stationary setpoint for the demand `p_d` (slot order).
pub fn compute_setpoint(
    grid: &GridModel,
    sys: &DescriptorSystem,
    p_d: &Vector,
    sharing: &dyn SharingPolicy,
) -> Result<Setpoint> {
    let (n, g) = (grid.n(), grid.g());
    if p_d.len() != n {
        return Err(Error::dimension("demand vector", n, p_d.len()));
    }
    if let Some(i) = p_d.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::validation(
            "demand",
            format!("entry for bus {} is {} (must be nonnegative)", grid.bus_order()[i], p_d[i]),
        ));
    }
    let total = p_d.sum();
    let u_s = sharing.shares(grid, total);
    if u_s.len() != g {
        return Err(Error::dimension(format!("`{}` shares", sharing.name()), g, u_s.len()));
    }
    if let Some(k) = u_s.iter().position(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::validation(
            "sharing",
            format!(
                "policy `{}` assigns {} to generator {} (bus {}); generation must be nonnegative",
                sharing.name(),
                u_s[k],
                k + 1,
                grid.bus_order()[k]
            ),
        ));
    }

    let mut injection = -p_d.clone();
    for k in 0..g {
        injection[k] += u_s[k];
    }
    let imbalance = injection.sum();
    if imbalance.abs() > 1e-9 * total.max(1.0) {
        return Err(Error::Numerical(format!("injections do not balance ({imbalance:.3e})")));
    }
    let lap = build_laplacian(grid);
    let mut theta = Tolerance::default().lstsq(&lap, &injection);
    let reference = theta[0];
    theta.add_scalar_mut(-reference);

    let mut x_s = Vector::zeros(n + g);
    x_s.rows_mut(g, n).copy_from(&theta);
    let sp = Setpoint { y_s: &sys.c * &x_s, u_s, w_s: p_d.clone(), x_s };
    let res = sp.stationarity_residual(sys);
    if res > STATIONARITY_RTOL {
        return Err(Error::Numerical(format!("setpoint stationarity residual {res:.3e}")));
    }
    Ok(sp)
}

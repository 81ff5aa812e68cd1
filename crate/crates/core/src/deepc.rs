//! Data-enabled predictive control for descriptor systems.
//!
//! The model is replaced by Hankel matrices of depth `L' = L + q + s − 1`
//! built from one offline experiment. The first `P = q + s − 1` block rows
//! ("past") pin the latent state to the last `P` measurements, and the
//! remaining `L` block rows ("future") parameterize the prediction.

use std::collections::VecDeque;
use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::behavior::{required_pe_order, DataArchive, DataHankel};
use crate::control::{Decision, FrequencyController, Observation, StepDiagnostics};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tolerance, Vector};
use crate::pencil::QuasiWeierstrass;
use crate::qp::{QpSolution, QpSolver, QpStatus, QuadraticProgram, KKT_TOL};
use crate::setpoint::Setpoint;

/// Horizon and weights of the optimal control problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpConfig {
    pub horizon: usize,
    pub q_weight: Matrix,
    pub r_weight: Matrix,
    /// Optional `ε‖α‖²` regularization; zero keeps the original problem.
    pub ridge: f64,
}

impl OcpConfig {
    /// `L = 20`, `Q = 10·I`, `R = I`.
    pub fn standard(m: usize, g: usize) -> Self {
        Self::scaled(20, m, g, 10.0, 1.0)
    }

    pub fn scaled(horizon: usize, m: usize, g: usize, q_scale: f64, r_scale: f64) -> Self {
        OcpConfig {
            horizon,
            q_weight: q_scale * Matrix::identity(m, m),
            r_weight: r_scale * Matrix::identity(g, g),
            ridge: 0.0,
        }
    }

    /// Shortest admissible horizon `L̃ + q + s − 2` with `L̃ = 2s + q`.
    pub fn min_horizon(q: usize, s: usize) -> usize {
        (2 * s + q + q + s).saturating_sub(2)
    }

    pub fn validate(&self, q: usize, s: usize, m: usize, g: usize) -> Result<()> {
        let min = Self::min_horizon(q, s);
        if self.horizon < min.max(1) {
            return Err(Error::validation(
                "horizon",
                format!("L = {} is below the minimum {min} for q = {q}, s = {s}", self.horizon),
            ));
        }
        check_pd("Q", &self.q_weight, m)?;
        check_pd("R", &self.r_weight, g)?;
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::validation("ridge", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn check_pd(name: &str, m: &Matrix, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(Error::dimension(name, format!("{dim}x{dim}"), format!("{:?}", m.shape())));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::validation(name, "must be symmetric"));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::validation(name, "must be positive definite"));
    }
    Ok(())
}

/// Named equality blocks, in assembly order.
pub const BLOCKS: [&str; 4] = ["prediction", "initial_condition", "terminal", "demand"];

/// Fixed structure of the data-driven OCP.
#[derive(Clone, Debug)]
pub struct OcpLayout {
    pub horizon: usize,
    pub past: usize,
    pub g: usize,
    pub n: usize,
    pub m: usize,
    /// Number of Hankel columns, the dimension of `α`.
    pub n_alpha: usize,
    /// Row ranges of each equality block.
    pub block_rows: [(usize, usize); 4],
    pub h: Matrix,
    pub a_eq: Matrix,
    pub nonneg_idx: Vec<usize>,
}

impl OcpLayout {
    pub fn n_vars(&self) -> usize {
        self.n_alpha + (self.g + self.m) * self.horizon
    }

    pub fn u_offset(&self) -> usize {
        self.n_alpha
    }

    pub fn y_offset(&self) -> usize {
        self.n_alpha + self.g * self.horizon
    }
}

/// Build the constant part of the OCP: Hessian, equality matrix and bounds.
pub fn ocp_layout(hankel: &DataHankel, cfg: &OcpConfig, past: usize) -> OcpLayout {
    let l = cfg.horizon;
    let (g, n, m) = (hankel.hu.k, hankel.hw.k, hankel.hy.k);
    let na = hankel.cols();
    let nv = na + (g + m) * l;
    let (uo, yo) = (na, na + g * l);

    let mut h = Matrix::zeros(nv, nv);
    for i in 0..na {
        h[(i, i)] = 2.0 * cfg.ridge;
    }
    for k in 0..l {
        h.view_mut((uo + k * g, uo + k * g), (g, g)).copy_from(&(2.0 * &cfg.r_weight));
        h.view_mut((yo + k * m, yo + k * m), (m, m)).copy_from(&(2.0 * &cfg.q_weight));
    }

    let rows_pred = (g + m) * l;
    let rows_init = (g + n + m) * past;
    let rows_term = (g + m) * past;
    let rows_demand = n * l;
    let total = rows_pred + rows_init + rows_term + rows_demand;
    let mut a = Matrix::zeros(total, nv);
    let mut r = 0;
    let mut block_rows = [(0, 0); 4];

    // prediction: future Hankel rows reproduce the predicted trajectory
    let start = r;
    a.view_mut((r, 0), (g * l, na)).copy_from(&hankel.hu.block_rows(past, l));
    a.view_mut((r, uo), (g * l, g * l)).copy_from(&(-Matrix::identity(g * l, g * l)));
    r += g * l;
    a.view_mut((r, 0), (m * l, na)).copy_from(&hankel.hy.block_rows(past, l));
    a.view_mut((r, yo), (m * l, m * l)).copy_from(&(-Matrix::identity(m * l, m * l)));
    r += m * l;
    block_rows[0] = (start, r);

    // initial condition: past rows match the measured history
    let start = r;
    for hb in [&hankel.hu, &hankel.hw, &hankel.hy] {
        let rows = hb.k * past;
        a.view_mut((r, 0), (rows, na)).copy_from(&hb.block_rows(0, past));
        r += rows;
    }
    block_rows[1] = (start, r);

    // terminal: the last `past` predicted samples sit at the setpoint
    let start = r;
    for (off, k) in [(uo, g), (yo, m)] {
        for j in 0..past {
            let col = off + (l - past + j) * k;
            a.view_mut((r, col), (k, k)).fill_with_identity();
            r += k;
        }
    }
    block_rows[2] = (start, r);

    // demand: predicted demand equals the forecast
    let start = r;
    a.view_mut((r, 0), (n * l, na)).copy_from(&hankel.hw.block_rows(past, l));
    r += n * l;
    block_rows[3] = (start, r);
    debug_assert_eq!(r, total);

    OcpLayout { horizon: l, past, g, n, m, n_alpha: na, block_rows, h, a_eq: a, nonneg_idx: (uo..uo + g * l).collect() }
}

/// Measured `(u, w, y)` history.
pub type History = VecDeque<(Vector, Vector, Vector)>;

/// Right-hand side and linear cost for the current history and target.
pub fn ocp_data(
    layout: &OcpLayout,
    history: &History,
    setpoint: &Setpoint,
    demand: &Vector,
    cfg: &OcpConfig,
) -> (Vector, Vector) {
    let (g, n, m, l, p) = (layout.g, layout.n, layout.m, layout.horizon, layout.past);
    let mut b = Vector::zeros(layout.a_eq.nrows());
    let mut r = layout.block_rows[1].0;
    for (u, _, _) in history {
        b.rows_mut(r, g).copy_from(u);
        r += g;
    }
    for (_, w, _) in history {
        b.rows_mut(r, n).copy_from(w);
        r += n;
    }
    for (_, _, y) in history {
        b.rows_mut(r, m).copy_from(y);
        r += m;
    }
    for _ in 0..p {
        b.rows_mut(r, g).copy_from(&setpoint.u_s);
        r += g;
    }
    for _ in 0..p {
        b.rows_mut(r, m).copy_from(&setpoint.y_s);
        r += m;
    }
    for _ in 0..l {
        b.rows_mut(r, n).copy_from(demand);
        r += n;
    }
    let mut c = Vector::zeros(layout.n_vars());
    let ru = -2.0 * &cfg.r_weight * &setpoint.u_s;
    let qy = -2.0 * &cfg.q_weight * &setpoint.y_s;
    for k in 0..l {
        c.rows_mut(layout.u_offset() + k * g, g).copy_from(&ru);
        c.rows_mut(layout.y_offset() + k * m, m).copy_from(&qy);
    }
    (b, c)
}

/// Receding-horizon controller backed by one data archive.
#[derive(Clone, Debug)]
pub struct DeepcController {
    cfg: OcpConfig,
    layout: OcpLayout,
    solver: QpSolver,
    history: History,
    setpoint: Option<Setpoint>,
    cost_offset: f64,
}

impl DeepcController {
    pub fn new(qw: &QuasiWeierstrass, archive: &DataArchive, cfg: OcpConfig) -> Result<Self> {
        let (q, s) = (qw.q, qw.s);
        let first = |v: &[Vector]| v.first().map_or(0, |x| x.len());
        let (g, _n, m) = (first(&archive.u_bar), first(&archive.w_bar), first(&archive.y_bar));
        cfg.validate(q, s, m, g)?;
        let needed = required_pe_order(cfg.horizon, q, s);
        if archive.pe_order_verified < needed {
            return Err(Error::validation(
                "archive",
                format!("excitation order {} is below the required {needed} (L + 2(q+s−1))", archive.pe_order_verified),
            ));
        }
        let past = q + s - 1;
        let hankel = DataHankel::new(archive, cfg.horizon + past, s)?;
        let layout = ocp_layout(&hankel, &cfg, past);
        let solver = QpSolver::new(&layout.h, &layout.a_eq, &layout.nonneg_idx)?;
        debug!(
            "DeePC: {} variables ({} α), {} equalities of rank {}",
            layout.n_vars(),
            layout.n_alpha,
            layout.a_eq.nrows(),
            solver.equality_rank()
        );
        Ok(DeepcController {
            cfg,
            layout,
            solver,
            history: VecDeque::with_capacity(past),
            setpoint: None,
            cost_offset: 0.0,
        })
    }

    pub fn layout(&self) -> &OcpLayout {
        &self.layout
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Replace the history (oldest first); must hold exactly `q+s−1` samples.
    pub fn set_history(&mut self, history: History) -> Result<()> {
        if history.len() != self.layout.past {
            return Err(Error::validation(
                "history",
                format!("need {} samples, got {}", self.layout.past, history.len()),
            ));
        }
        self.history = history;
        Ok(())
    }

    fn set_target(&mut self, sp: &Setpoint) {
        self.cost_offset = self.cfg.horizon as f64
            * (sp.u_s.dot(&(&self.cfg.r_weight * &sp.u_s)) + sp.y_s.dot(&(&self.cfg.q_weight * &sp.y_s)));
        self.setpoint = Some(sp.clone());
    }

    /// The QP for the current history, target and demand forecast.
    pub fn assemble(&self, demand: &Vector) -> Result<QuadraticProgram> {
        let sp = self.setpoint.as_ref().ok_or_else(|| Error::validation("setpoint", "controller not reset"))?;
        if self.history.len() != self.layout.past {
            return Err(Error::validation(
                "history",
                format!("incomplete: {} of {} samples", self.history.len(), self.layout.past),
            ));
        }
        let (b, c) = ocp_data(&self.layout, &self.history, sp, demand, &self.cfg);
        QuadraticProgram::new(self.layout.h.clone(), c, self.layout.a_eq.clone(), b, self.layout.nonneg_idx.clone())
    }

    /// Solve the OCP; returns the QP solution and the optimal cost.
    pub fn solve(&self, demand: &Vector, t: usize) -> Result<(QpSolution, f64)> {
        let sp = self.setpoint.as_ref().ok_or_else(|| Error::validation("setpoint", "controller not reset"))?;
        if self.history.len() != self.layout.past {
            return Err(Error::validation("history", "incomplete"));
        }
        let (b, c) = ocp_data(&self.layout, &self.history, sp, demand, &self.cfg);
        let sol = self.solver.solve(&c, &b)?;
        match sol.status {
            QpStatus::Optimal => {
                let cost = (sol.objective + self.cost_offset).max(0.0);
                Ok((sol, cost))
            }
            QpStatus::Infeasible => Err(Error::Infeasible {
                t,
                block: self.first_violated_block(&b),
                detail: format!("scaled residual {:.3e}", sol.infeasibility),
            }),
            QpStatus::MaxIterations => {
                Err(Error::Numerical(format!("QP hit the iteration limit after {} iterations", sol.iterations)))
            }
            QpStatus::Unbounded => Err(Error::Numerical("QP unbounded".into())),
        }
    }

    /// First equality block whose addition makes the system inconsistent;
    /// `input_bounds` when only the nonnegativity bounds are to blame.
    fn first_violated_block(&self, b: &Vector) -> String {
        let tol = Tolerance::default();
        for (k, name) in BLOCKS.iter().enumerate() {
            let end = self.layout.block_rows[k].1;
            let a = self.layout.a_eq.rows(0, end).into_owned();
            let rhs = b.rows(0, end).into_owned();
            let x = tol.lstsq(&a, &rhs);
            if (&a * x - &rhs).amax() / rhs.amax().max(1.0) > KKT_TOL {
                return (*name).to_string();
            }
        }
        "input_bounds".to_string()
    }

    /// Split a solution vector into predicted `û` and `ŷ` sequences.
    pub fn predicted(&self, x: &Vector) -> (Vec<Vector>, Vec<Vector>) {
        let (g, m, l) = (self.layout.g, self.layout.m, self.layout.horizon);
        let u = (0..l).map(|k| x.rows(self.layout.u_offset() + k * g, g).into_owned()).collect();
        let y = (0..l).map(|k| x.rows(self.layout.y_offset() + k * m, m).into_owned()).collect();
        (u, y)
    }
}

impl FrequencyController for DeepcController {
    fn name(&self) -> &'static str {
        "deepc"
    }

    /// Seeds the history with the stationary samples of `setpoint`.
    fn reset(&mut self, setpoint: &Setpoint) -> Result<()> {
        self.history.clear();
        for _ in 0..self.layout.past {
            self.history.push_back((setpoint.u_s.clone(), setpoint.w_s.clone(), setpoint.y_s.clone()));
        }
        self.set_target(setpoint);
        Ok(())
    }

    fn on_setpoint_change(&mut self, setpoint: &Setpoint) -> Result<()> {
        self.set_target(setpoint);
        Ok(())
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Decision> {
        let start = Instant::now();
        let (sol, cost) = self.solve(obs.demand, obs.t)?;
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;
        let (predicted_u, predicted_y) = self.predicted(&sol.x);
        Ok(Decision {
            u: predicted_u[0].clone(),
            diagnostics: StepDiagnostics {
                t: obs.t,
                cost,
                kkt: sol.kkt_residual,
                active_bounds: sol.active_bounds.len(),
                solve_ms,
                clipped: 0,
                predicted_u,
                predicted_y,
            },
        })
    }

    fn record(&mut self, u: &Vector, w: &Vector, y: &Vector) {
        if self.history.len() == self.layout.past {
            self.history.pop_front();
        }
        self.history.push_back((u.clone(), w.clone(), y.clone()));
    }
}

/// DeePC closed loop on a demand schedule.
#[allow(clippy::too_many_arguments)]
pub fn run_deepc(
    grid: &crate::grid::GridModel,
    sys: &crate::grid::DescriptorSystem,
    qw: &QuasiWeierstrass,
    archive: &DataArchive,
    cfg: &OcpConfig,
    schedule: &crate::schedule::DemandSchedule,
    steps: usize,
    sharing: &dyn crate::setpoint::SharingPolicy,
) -> Result<crate::control::ClosedLoopRun> {
    let mut ctrl = DeepcController::new(qw, archive, cfg.clone())?;
    crate::control::run_closed_loop(grid, sys, qw, &mut ctrl, schedule, steps, sharing)
}

//! Causal simulation of regular index-one descriptor systems.
//!
//! In quasi-Weierstraß coordinates `z = P⁻¹x` the dynamics split into
//! `z1⁺ = A1 z1 + [S(Bu + Fw)]₁` and the algebraic part
//! `z2 = −[S(Bu + Fw)]₂` (valid because `N = 0` when `s = 1`).

use log::warn;

use crate::error::{Error, Result};
use crate::grid::DescriptorSystem;
use crate::linalg::{Matrix, Vector};
use crate::pencil::QuasiWeierstrass;

/// Relative tolerance of the descriptor-residual check.
pub const RESIDUAL_RTOL: f64 = 1e-9;

/// Time-indexed `(u, w, y[, x])` records starting at `t0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: usize,
    pub u: Vec<Vector>,
    pub w: Vec<Vector>,
    pub y: Vec<Vector>,
    pub x: Option<Vec<Vector>>,
}

impl Trajectory {
    pub fn new(t0: usize, u: Vec<Vector>, w: Vec<Vector>, y: Vec<Vector>, x: Option<Vec<Vector>>) -> Result<Self> {
        let len = u.len();
        if w.len() != len || y.len() != len || x.as_ref().is_some_and(|x| x.len() != len) {
            return Err(Error::dimension(
                "trajectory",
                format!("{len} samples in every signal"),
                format!("u {}, w {}, y {}, x {:?}", u.len(), w.len(), y.len(), x.as_ref().map(Vec::len)),
            ));
        }
        Ok(Trajectory { t0, u, w, y, x })
    }

    pub fn empty(t0: usize) -> Self {
        Trajectory { t0, u: Vec::new(), w: Vec::new(), y: Vec::new(), x: Some(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn push(&mut self, u: Vector, w: Vector, y: Vector, x: Option<Vector>) {
        self.u.push(u);
        self.w.push(w);
        self.y.push(y);
        match (&mut self.x, x) {
            (Some(xs), Some(x)) => xs.push(x),
            (xs, _) => *xs = None,
        }
    }

    /// Samples `[from, from + len)` (relative indices).
    pub fn window(&self, from: usize, len: usize) -> Trajectory {
        let r = from..from + len;
        Trajectory {
            t0: self.t0 + from,
            u: self.u[r.clone()].to_vec(),
            w: self.w[r.clone()].to_vec(),
            y: self.y[r.clone()].to_vec(),
            x: self.x.as_ref().map(|x| x[r].to_vec()),
        }
    }

    /// Largest scaled descriptor residual
    /// `‖E x(t+1) − A x(t) − B u(t) − F w(t)‖∞ / scale` over interior steps,
    /// together with the largest `‖y − C x‖∞ / scale`.
    pub fn residuals(&self, sys: &DescriptorSystem) -> Option<(f64, f64)> {
        let xs = self.x.as_ref()?;
        let mut dyn_res: f64 = 0.0;
        let mut out_res: f64 = 0.0;
        for t in 0..xs.len() {
            let cx = &sys.c * &xs[t];
            out_res = out_res.max((&self.y[t] - &cx).amax() / cx.amax().max(1.0));
            if t + 1 < xs.len() {
                let r = sys.residual(&xs[t + 1], &xs[t], &self.u[t], &self.w[t]);
                let scale = sys.residual_scale(&xs[t + 1], &xs[t], &self.u[t], &self.w[t]);
                dyn_res = dyn_res.max(r / scale);
            }
        }
        Some((dyn_res, out_res))
    }

    /// `true` when both residuals are within [`RESIDUAL_RTOL`].
    pub fn satisfies_descriptor(&self, sys: &DescriptorSystem) -> bool {
        self.residuals(sys).is_some_and(|(d, o)| d <= RESIDUAL_RTOL && o <= RESIDUAL_RTOL)
    }
}

fn require_index_one(qw: &QuasiWeierstrass) -> Result<()> {
    if qw.s != 1 {
        return Err(Error::UnsupportedIndex {
            s: qw.s,
            message: "the algebraic part would depend on future inputs".into(),
        });
    }
    Ok(())
}

/// Keep the dynamic coordinates of `x_guess` and overwrite the algebraic
/// ones so that the algebraic rows hold for `(u0, w0)`.
pub fn make_consistent(
    sys: &DescriptorSystem,
    qw: &QuasiWeierstrass,
    x_guess: &Vector,
    u0: &Vector,
    w0: &Vector,
) -> Result<Vector> {
    require_index_one(qw)?;
    let mut z = &qw.p_inv * x_guess;
    let forcing = &qw.s_mat * (&sys.b * u0 + &sys.f * w0);
    let q = qw.q;
    for i in q..z.len() {
        z[i] = -forcing[i];
    }
    Ok(&qw.p_mat * z)
}

/// Step-by-step plant: holds the dynamic coordinates `z1(t)`.
#[derive(Clone, Debug)]
pub struct Plant<'a> {
    sys: &'a DescriptorSystem,
    qw: &'a QuasiWeierstrass,
    sb: Matrix,
    sf: Matrix,
    p1: Matrix,
    z1: Vector,
}

impl<'a> Plant<'a> {
    /// Start from `x_init`; only its dynamic coordinates matter.
    pub fn new(sys: &'a DescriptorSystem, qw: &'a QuasiWeierstrass, x_init: &Vector) -> Result<Self> {
        require_index_one(qw)?;
        if x_init.len() != sys.nx() {
            return Err(Error::dimension("initial state", sys.nx(), x_init.len()));
        }
        let q = qw.q;
        let z = &qw.p_inv * x_init;
        Ok(Plant {
            sys,
            qw,
            sb: &qw.s_mat * &sys.b,
            sf: &qw.s_mat * &sys.f,
            p1: qw.p_mat.columns(0, q).into_owned(),
            z1: z.rows(0, q).into_owned(),
        })
    }

    /// Start from `x_init`, projecting it onto the consistent set for the
    /// first inputs (with a warning) when needed.
    pub fn from_state(
        sys: &'a DescriptorSystem,
        qw: &'a QuasiWeierstrass,
        x_init: &Vector,
        u0: &Vector,
        w0: &Vector,
    ) -> Result<Self> {
        let plant = Self::new(sys, qw, x_init)?;
        let x0 = plant.state(u0, w0);
        let gap = (&x0 - x_init).amax();
        if gap > RESIDUAL_RTOL * x_init.amax().max(1.0) {
            warn!("initial state inconsistent with the algebraic constraints (gap {gap:.3e}); projected");
        }
        Ok(plant)
    }

    fn forcing(&self, u: &Vector, w: &Vector) -> Vector {
        &self.sb * u + &self.sf * w
    }

    /// Contribution of the dynamic coordinates, `P₁ z1(t)`. For grid models
    /// it carries the frequencies and generator angles exactly, because
    /// the algebraic directions (`ker E`) only move load angles.
    pub fn dynamic_state(&self) -> Vector {
        &self.p1 * &self.z1
    }

    /// Full state `x(t)` given the inputs applied at `t`.
    pub fn state(&self, u: &Vector, w: &Vector) -> Vector {
        let f = self.forcing(u, w);
        let q = self.qw.q;
        let mut z = Vector::zeros(self.sys.nx());
        z.rows_mut(0, q).copy_from(&self.z1);
        for i in q..z.len() {
            z[i] = -f[i];
        }
        &self.qw.p_mat * z
    }

    /// Apply `(u, w)` at the current time; returns `(x(t), y(t))` and
    /// advances to `t + 1`.
    pub fn step(&mut self, u: &Vector, w: &Vector) -> (Vector, Vector) {
        let x = self.state(u, w);
        let y = &self.sys.c * &x;
        let f = self.forcing(u, w);
        self.z1 = &self.qw.a1 * &self.z1 + f.rows(0, self.qw.q);
        (x, y)
    }
}

/// Simulate from `x_init` under the input sequences `u`, `w`.
pub fn simulate(
    sys: &DescriptorSystem,
    qw: &QuasiWeierstrass,
    x_init: &Vector,
    u: &[Vector],
    w: &[Vector],
) -> Result<Trajectory> {
    if u.len() != w.len() {
        return Err(Error::dimension("input sequences", u.len(), w.len()));
    }
    for (t, (ut, wt)) in u.iter().zip(w).enumerate() {
        if ut.len() != sys.b.ncols() || wt.len() != sys.f.ncols() {
            return Err(Error::dimension(
                format!("inputs at t = {t}"),
                format!("u: {}, w: {}", sys.b.ncols(), sys.f.ncols()),
                format!("u: {}, w: {}", ut.len(), wt.len()),
            ));
        }
    }
    let mut plant = match (u.first(), w.first()) {
        (Some(u0), Some(w0)) => Plant::from_state(sys, qw, x_init, u0, w0)?,
        _ => Plant::new(sys, qw, x_init)?,
    };
    let mut traj = Trajectory::empty(0);
    for (ut, wt) in u.iter().zip(w) {
        let (x, y) = plant.step(ut, wt);
        traj.push(ut.clone(), wt.clone(), y, Some(x));
    }
    Ok(traj)
}

//! Network data and the Euler-discretized descriptor model of a lossless grid.
//!
//! State convention: `x = [ω_G; θ_G; θ_{N∖G}]`, input `u = p` (mechanical
//! power at the generators), disturbance `w = p^d` (demand at every bus).
//! Generators always occupy the first `g` bus slots; [`GridModel::bus_order`]
//! maps slots back to the bus numbers used in the input file.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub inertia: f64,
    pub damping: f64,
}

/// A validated, lossless, connected network.
#[derive(Clone, Debug, PartialEq)]
pub struct GridModel {
    susceptance: Matrix,
    generators: Vec<GeneratorParams>,
    tau: f64,
    bus_order: Vec<usize>,
}

/// On-disk layout of a grid document (bus numbers are 1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub buses: usize,
    pub tau: f64,
    pub generators: Vec<GeneratorEntry>,
    #[serde(default)]
    pub lines: Vec<LineEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEntry {
    pub index: usize,
    pub inertia: f64,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be positive and finite, got {v}")))
    }
}

impl GridModel {
    /// Build a grid whose generators already sit on buses `0..g`.
    pub fn new(susceptance: Matrix, generators: Vec<GeneratorParams>, tau: f64) -> Result<Self> {
        let n = susceptance.nrows();
        let bus_order = (1..=n).collect();
        Self::with_order(susceptance, generators, tau, bus_order)
    }

    fn with_order(
        susceptance: Matrix,
        generators: Vec<GeneratorParams>,
        tau: f64,
        bus_order: Vec<usize>,
    ) -> Result<Self> {
        let n = susceptance.nrows();
        if n == 0 || !susceptance.is_square() {
            return Err(Error::dimension(
                "susceptance matrix",
                "non-empty square",
                format!("{}x{}", susceptance.nrows(), susceptance.ncols()),
            ));
        }
        if generators.is_empty() || generators.len() > n {
            return Err(Error::validation("generators", format!("need 1..={n} generators, got {}", generators.len())));
        }
        positive("tau", tau)?;
        for (i, gen) in generators.iter().enumerate() {
            positive(&format!("generators[{i}].inertia"), gen.inertia)?;
            positive(&format!("generators[{i}].damping"), gen.damping)?;
        }
        for i in 0..n {
            if susceptance[(i, i)] != 0.0 {
                return Err(Error::validation(
                    "susceptance",
                    format!("diagonal entry at bus {} must be zero", bus_order[i]),
                ));
            }
            for j in 0..n {
                let b = susceptance[(i, j)];
                if !b.is_finite() || b < 0.0 {
                    return Err(Error::validation(
                        "susceptance",
                        format!("entry ({}, {}) = {b} must be nonnegative", bus_order[i], bus_order[j]),
                    ));
                }
                if b != susceptance[(j, i)] {
                    return Err(Error::validation(
                        "susceptance",
                        format!("not symmetric between buses {} and {}", bus_order[i], bus_order[j]),
                    ));
                }
            }
        }
        if let Some(bus) = first_unreachable(&susceptance) {
            return Err(Error::validation(
                "lines",
                format!("grid is disconnected: bus {} unreachable from bus {}", bus_order[bus], bus_order[0]),
            ));
        }
        Ok(GridModel { susceptance, generators, tau, bus_order })
    }

    /// Validate a parsed grid document, moving generator buses to the front.
    pub fn from_file_spec(spec: &GridFile) -> Result<Self> {
        let n = spec.buses;
        if n == 0 {
            return Err(Error::validation("buses", "must be at least 1"));
        }
        let check_bus = |field: &str, b: usize| -> Result<usize> {
            if (1..=n).contains(&b) {
                Ok(b - 1)
            } else {
                Err(Error::validation(field, format!("bus {b} outside 1..={n}")))
            }
        };
        let mut is_gen = vec![false; n];
        let mut gens = Vec::with_capacity(spec.generators.len());
        let mut order = Vec::with_capacity(n);
        for (k, ge) in spec.generators.iter().enumerate() {
            let field = format!("generators[{k}].index");
            let b = check_bus(&field, ge.index)?;
            if is_gen[b] {
                return Err(Error::validation(field, format!("bus {} listed twice", ge.index)));
            }
            is_gen[b] = true;
            order.push(b);
            gens.push(GeneratorParams { inertia: ge.inertia, damping: ge.damping });
        }
        order.extend((0..n).filter(|&b| !is_gen[b]));
        let mut slot = vec![0; n];
        for (s, &b) in order.iter().enumerate() {
            slot[b] = s;
        }

        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (k, line) in spec.lines.iter().enumerate() {
            let field = format!("lines[{k}]");
            let a = check_bus(&field, line.from)?;
            let b = check_bus(&field, line.to)?;
            if a == b {
                return Err(Error::validation(field, format!("self-loop at bus {}", line.from)));
            }
            if !line.susceptance.is_finite() || line.susceptance < 0.0 {
                return Err(Error::validation(
                    format!("{field}.susceptance"),
                    format!("must be nonnegative, got {}", line.susceptance),
                ));
            }
            if entries.insert((a, b), line.susceptance).is_some() {
                return Err(Error::validation(field, format!("duplicate line {} -> {}", line.from, line.to)));
            }
            // a reverse entry is allowed only if it agrees
            if let Some(&rev) = entries.get(&(b, a)) {
                if rev != line.susceptance {
                    return Err(Error::validation(
                        "susceptance",
                        format!(
                            "not symmetric between buses {} and {} ({} vs {})",
                            line.from, line.to, line.susceptance, rev
                        ),
                    ));
                }
            }
        }
        let mut sus = Matrix::zeros(n, n);
        for (&(a, b), &v) in &entries {
            sus[(slot[a], slot[b])] = v;
            sus[(slot[b], slot[a])] = v;
        }
        let bus_order = order.iter().map(|b| b + 1).collect();
        Self::with_order(sus, gens, spec.tau, bus_order)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: GridFile =
            toml::from_str(text).map_err(|e| Error::Parse { path: "<string>".into(), message: e.to_string() })?;
        Self::from_file_spec(&spec)
    }

    pub fn n(&self) -> usize {
        self.susceptance.nrows()
    }

    pub fn g(&self) -> usize {
        self.generators.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn susceptance(&self) -> &Matrix {
        &self.susceptance
    }

    pub fn generators(&self) -> &[GeneratorParams] {
        &self.generators
    }

    /// `bus_order()[slot]` is the file's bus number placed at `slot`.
    pub fn bus_order(&self) -> &[usize] {
        &self.bus_order
    }

    /// Reorder a per-bus vector given in file numbering into slot order.
    pub fn bus_vector_from_file(&self, values: &[f64]) -> Result<crate::linalg::Vector> {
        if values.len() != self.n() {
            return Err(Error::dimension("per-bus vector", self.n(), values.len()));
        }
        Ok(crate::linalg::Vector::from_iterator(self.n(), self.bus_order.iter().map(|&b| values[b - 1])))
    }

    /// Inverse of [`GridModel::bus_vector_from_file`].
    pub fn bus_vector_to_file(&self, slots: &crate::linalg::Vector) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (slot, &b) in self.bus_order.iter().enumerate() {
            out[b - 1] = slots[slot];
        }
        out
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::with_order(self.susceptance.clone(), self.generators.clone(), tau, self.bus_order.clone())
    }

    /// Copy with every generator's inertia multiplied by `factor`.
    pub fn with_inertia_scale(&self, factor: f64) -> Result<Self> {
        let gens = self
            .generators
            .iter()
            .map(|g| GeneratorParams { inertia: g.inertia * factor, damping: g.damping })
            .collect();
        Self::with_order(self.susceptance.clone(), gens, self.tau, self.bus_order.clone())
    }

    pub fn to_file_spec(&self) -> GridFile {
        let n = self.n();
        let mut lines = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let b = self.susceptance[(i, j)];
                if b != 0.0 {
                    lines.push(LineEntry { from: self.bus_order[i], to: self.bus_order[j], susceptance: b });
                }
            }
        }
        GridFile {
            buses: n,
            tau: self.tau,
            generators: self
                .generators
                .iter()
                .enumerate()
                .map(|(k, g)| GeneratorEntry { index: self.bus_order[k], inertia: g.inertia, damping: g.damping })
                .collect(),
            lines,
        }
    }
}

fn first_unreachable(adj: &Matrix) -> Option<usize> {
    let n = adj.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && adj[(i, j)] != 0.0 {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.iter().position(|s| !s)
}

/// Read and validate a grid document from disk.
pub fn load_grid(path: impl AsRef<Path>) -> Result<GridModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let spec: GridFile =
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    GridModel::from_file_spec(&spec)
}

/// `L = diag(row sums) − B̄`.
pub fn build_laplacian(grid: &GridModel) -> Matrix {
    let b = grid.susceptance();
    let n = b.nrows();
    let mut l = -b.clone();
    for i in 0..n {
        l[(i, i)] = b.row(i).iter().sum();
    }
    l
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub g: usize,
    pub m: usize,
}

impl Dims {
    pub fn states(&self) -> usize {
        self.n + self.g
    }

    /// Width of the stacked `[u; w; y]` signal.
    pub fn signal(&self) -> usize {
        self.g + self.n + self.m
    }
}

/// `E x(t+1) = A x(t) + B u(t) + F w(t)`, `y = C x`.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSystem {
    pub e: Matrix,
    pub a: Matrix,
    pub b: Matrix,
    pub f: Matrix,
    pub c: Matrix,
    pub dims: Dims,
}

impl DescriptorSystem {
    /// Wrap arbitrary matrices, checking only shapes.
    pub fn from_matrices(e: Matrix, a: Matrix, b: Matrix, f: Matrix, c: Matrix) -> Result<Self> {
        let nx = e.nrows();
        if !e.is_square() || a.shape() != (nx, nx) {
            return Err(Error::dimension(
                "pencil (E, A)",
                format!("{nx}x{nx}"),
                format!("{:?} / {:?}", e.shape(), a.shape()),
            ));
        }
        if b.nrows() != nx || f.nrows() != nx || c.ncols() != nx {
            return Err(Error::dimension(
                "B, F, C",
                format!("{nx} rows / {nx} columns"),
                format!("{} / {} / {}", b.nrows(), f.nrows(), c.ncols()),
            ));
        }
        // n + g = nx with g inputs and n disturbances only holds for grid
        // models; generic systems just record the channel widths.
        let dims = Dims { n: f.ncols(), g: b.ncols(), m: c.nrows() };
        Ok(DescriptorSystem { e, a, b, f, c, dims })
    }

    pub fn nx(&self) -> usize {
        self.e.nrows()
    }

    /// `‖E x⁺ − A x − B u − F w‖∞`.
    pub fn residual(
        &self,
        x_next: &crate::linalg::Vector,
        x: &crate::linalg::Vector,
        u: &crate::linalg::Vector,
        w: &crate::linalg::Vector,
    ) -> f64 {
        (&self.e * x_next - &self.a * x - &self.b * u - &self.f * w).amax()
    }

    /// Scale against which descriptor residuals are judged.
    pub fn residual_scale(
        &self,
        x_next: &crate::linalg::Vector,
        x: &crate::linalg::Vector,
        u: &crate::linalg::Vector,
        w: &crate::linalg::Vector,
    ) -> f64 {
        let terms = [(&self.e * x_next).amax(), (&self.a * x).amax(), (&self.b * u).amax(), (&self.f * w).amax()];
        terms.iter().copied().fold(1.0, f64::max)
    }
}

/// 1-based state indices of the generator angles (`C = [0 I_g 0]`).
pub fn generator_angle_selector(grid: &GridModel) -> Vec<usize> {
    let g = grid.g();
    (g + 1..=2 * g).collect()
}

/// Assemble `(E, A, B, F, C)`; `output_selector` holds 1-based state indices.
///
/// Rows `0..g` carry the angle kinematics `θ_G⁺ = θ_G + τ ω_G`, rows
/// `g..2g` the swing equations `M ω⁺ = M ω − τ(D ω + L_{G·} θ) + τ p − τ p^d_G`,
/// and the remaining rows the algebraic load balance `0 = L_{N·} θ + p^d_N`
/// (scaled by τ). Inertia sits in `E` so that `B` and `F` stay pure
/// `τ`-scaled selectors.
pub fn build_descriptor(grid: &GridModel, output_selector: &[usize]) -> Result<DescriptorSystem> {
    let (n, g, tau) = (grid.n(), grid.g(), grid.tau());
    let nx = n + g;
    for &k in output_selector {
        if !(1..=nx).contains(&k) {
            return Err(Error::validation("output_selector", format!("state index {k} outside 1..={nx}")));
        }
    }
    let lap = build_laplacian(grid);

    let mut e = Matrix::zeros(nx, nx);
    // structure block S'; A = E − τ S'
    let mut s = Matrix::zeros(nx, nx);
    for i in 0..g {
        let gen = grid.generators()[i];
        e[(i, g + i)] = 1.0;
        e[(g + i, i)] = gen.inertia;
        s[(i, i)] = -1.0;
        s[(g + i, i)] = gen.damping;
    }
    // Laplacian acts on all angles, which occupy state columns g..n+g
    s.view_mut((g, g), (n, n)).copy_from(&lap);
    let a = &e - tau * s;

    let mut b = Matrix::zeros(nx, g);
    let mut f = Matrix::zeros(nx, n);
    for i in 0..g {
        b[(g + i, i)] = tau;
    }
    for j in 0..n {
        f[(g + j, j)] = -tau;
    }
    let mut c = Matrix::zeros(output_selector.len(), nx);
    for (r, &k) in output_selector.iter().enumerate() {
        c[(r, k - 1)] = 1.0;
    }
    Ok(DescriptorSystem { e, a, b, f, c, dims: Dims { n, g, m: output_selector.len() } })
}

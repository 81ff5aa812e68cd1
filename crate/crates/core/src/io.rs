//! CSV and TOML readers/writers for trajectories, archives and reports.
//!
//! Demand columns are written in the grid file's bus order; everything else
//! (`u`, `y`, `x`) is already indexed by generator or state. Floats use the
//! shortest round-tripping representation, so write → read is exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::behavior::{ArchiveMeta, DataArchive};
use crate::control::StepDiagnostics;
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::linalg::Vector;
use crate::pencil::PencilReport;
use crate::setpoint::Setpoint;
use crate::simulator::Trajectory;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Parse { path: path.to_path_buf(), message: format!("{other:?}") },
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), message: message.into() }
}

/// Sidecar path for an archive: `data.csv` → `data.meta.toml`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.toml")
}

fn header(g: usize, n: usize, p: usize, nx: Option<usize>) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=g).map(|i| format!("u_{i}")));
    h.extend((1..=n).map(|i| format!("w_{i}")));
    h.extend((1..=p).map(|i| format!("y_{i}")));
    if let Some(nx) = nx {
        h.extend((1..=nx).map(|i| format!("x_{i}")));
    }
    h
}

fn write_signals(
    path: &Path,
    grid: &GridModel,
    t0: usize,
    u: &[Vector],
    w: &[Vector],
    y: &[Vector],
    x: Option<&[Vector]>,
) -> Result<()> {
    let p = y.first().map_or(0, |v| v.len());
    let nx = x.map(|x| x.first().map_or(0, |v| v.len()));
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    wtr.write_record(header(grid.g(), grid.n(), p, nx)).map_err(|e| csv_err(path, e))?;
    for k in 0..u.len() {
        let mut row = vec![(t0 + k).to_string()];
        row.extend(u[k].iter().map(f64::to_string));
        row.extend(grid.bus_vector_to_file(&w[k]).iter().map(f64::to_string));
        row.extend(y[k].iter().map(f64::to_string));
        if let Some(x) = x {
            row.extend(x[k].iter().map(f64::to_string));
        }
        wtr.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    wtr.flush().map_err(io_err(path))
}

type Columns = (usize, Vec<Vector>, Vec<Vector>, Vec<Vector>, Option<Vec<Vector>>);

fn read_signals(path: &Path, grid: &GridModel) -> Result<Columns> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let head = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let count = |prefix: &str| head.iter().filter(|h| h.starts_with(prefix)).count();
    let (g, n, p, nx) = (count("u_"), count("w_"), count("y_"), count("x_"));
    if head.get(0) != Some("t") || head.len() != 1 + g + n + p + nx {
        return Err(parse_err(path, "header must be t,u_*,w_*,y_*[,x_*]"));
    }
    if g != grid.g() || n != grid.n() {
        return Err(Error::validation(
            "csv columns",
            format!("expected {} u and {} w columns, found {g} and {n}", grid.g(), grid.n()),
        ));
    }
    let (mut u, mut w, mut y, mut x) = (vec![], vec![], vec![], vec![]);
    let mut t0 = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, format!("row {}: {e}", k + 1)))?;
        let t = vals[0] as usize;
        let t_first = *t0.get_or_insert(t);
        if t != t_first + k {
            return Err(parse_err(path, format!("row {}: time index {t} out of sequence", k + 1)));
        }
        let mut off = 1;
        let mut take = |len: usize| {
            let v = Vector::from_column_slice(&vals[off..off + len]);
            off += len;
            v
        };
        u.push(take(g));
        let w_file = take(n);
        y.push(take(p));
        x.push(take(nx));
        w.push(grid.bus_vector_from_file(w_file.as_slice())?);
    }
    Ok((t0.unwrap_or(0), u, w, y, (nx > 0).then_some(x)))
}

pub fn write_trajectory(path: impl AsRef<Path>, grid: &GridModel, traj: &Trajectory) -> Result<()> {
    write_signals(path.as_ref(), grid, traj.t0, &traj.u, &traj.w, &traj.y, traj.x.as_deref())
}

pub fn read_trajectory(path: impl AsRef<Path>, grid: &GridModel) -> Result<Trajectory> {
    let (t0, u, w, y, x) = read_signals(path.as_ref(), grid)?;
    Trajectory::new(t0, u, w, y, x)
}

/// Archive CSV plus its `.meta.toml` sidecar.
pub fn write_archive(path: impl AsRef<Path>, grid: &GridModel, archive: &DataArchive) -> Result<()> {
    let path = path.as_ref();
    write_signals(path, grid, 0, &archive.u_bar, &archive.w_bar, &archive.y_bar, None)?;
    write_toml(meta_path(path), &archive.meta())
}

pub fn read_archive(path: impl AsRef<Path>, grid: &GridModel) -> Result<DataArchive> {
    let path = path.as_ref();
    let (_, u_bar, w_bar, y_bar, _) = read_signals(path, grid)?;
    let meta: ArchiveMeta = read_toml(meta_path(path))?;
    if meta.samples != u_bar.len() {
        return Err(Error::dimension("archive samples", meta.samples, u_bar.len()));
    }
    Ok(DataArchive {
        u_bar,
        w_bar,
        y_bar,
        seed: meta.seed,
        amplitude: meta.amplitude,
        excitation: meta.excitation,
        pe_order_verified: meta.pe_order_verified,
    })
}

/// Per-step solver diagnostics. `timing = false` drops `solve_ms`, which
/// is the only nondeterministic column.
pub fn write_diagnostics(path: impl AsRef<Path>, diags: &[StepDiagnostics], timing: bool) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut head = vec!["t", "cost", "kkt", "active_bounds"];
    if timing {
        head.push("solve_ms");
    }
    head.push("clipped");
    wtr.write_record(&head).map_err(|e| csv_err(path, e))?;
    for d in diags {
        let mut row = vec![d.t.to_string(), d.cost.to_string(), d.kkt.to_string(), d.active_bounds.to_string()];
        if timing {
            row.push(format!("{:.3}", d.solve_ms));
        }
        row.push(d.clipped.to_string());
        wtr.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    wtr.flush().map_err(io_err(path))
}

pub fn write_toml<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = toml::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_pencil_report(path: impl AsRef<Path>, report: &PencilReport) -> Result<()> {
    write_toml(path, report)
}

/// Setpoint in file-facing form: plain arrays, demand-side in bus order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetpointFile {
    pub u_s: Vec<f64>,
    pub w_s: Vec<f64>,
    pub y_s: Vec<f64>,
    pub x_s: Vec<f64>,
}

impl SetpointFile {
    pub fn from_setpoint(grid: &GridModel, sp: &Setpoint) -> Self {
        SetpointFile {
            u_s: sp.u_s.as_slice().to_vec(),
            w_s: grid.bus_vector_to_file(&sp.w_s),
            y_s: sp.y_s.as_slice().to_vec(),
            x_s: sp.x_s.as_slice().to_vec(),
        }
    }
}

pub fn write_setpoint(path: impl AsRef<Path>, grid: &GridModel, sp: &Setpoint) -> Result<()> {
    write_toml(path, &SetpointFile::from_setpoint(grid, sp))
}

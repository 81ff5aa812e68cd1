//! `ddpc`: analysis, data collection and closed-loop frequency control runs
//! on a grid config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use ddpc_core::behavior::{collect_data, minimum_data_length, warn_if_short, DataArchive, Excitation};
use ddpc_core::control::{run_closed_loop, ClosedLoopRun, ControllerContext, ControllerRegistry};
use ddpc_core::deepc::OcpConfig;
use ddpc_core::droop::{DroopConfig, DEFAULT_GAIN};
use ddpc_core::grid::{build_descriptor, generator_angle_selector, load_grid, DescriptorSystem, GridModel};
use ddpc_core::io;
use ddpc_core::linalg::{Tolerance, Vector};
use ddpc_core::metrics::{compute_metrics, RunMetrics, DEFAULT_HOLD, DEFAULT_THRESHOLD};
use ddpc_core::pencil::{analyze, PencilReport, QuasiWeierstrass};
use ddpc_core::schedule::DemandSchedule;
use ddpc_core::setpoint::{compute_setpoint, SharingPolicy, SharingRegistry};
use ddpc_core::simulator::simulate;
use ddpc_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ddpc", version, about = "Data-driven predictive frequency control on descriptor grid models")]
struct Cli {
    /// Grid config (TOML).
    #[arg(long, global = true, default_value = "configs/nine_bus.toml")]
    grid: PathBuf,
    /// Seed for the excitation experiment.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pencil analysis: regularity, q, s, R-controllability/observability.
    Analyze,
    /// Run the excitation experiment and write the data archive.
    Collect(CollectArgs),
    /// Stationary setpoint for one demand vector.
    Setpoint(SetpointArgs),
    /// Open-loop simulation under a demand schedule.
    Simulate(SimulateArgs),
    /// DeePC closed loop.
    Deepc(DeepcArgs),
    /// Droop closed loop.
    Droop(DroopArgs),
    /// DeePC and droop on the same scenario, side by side.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct CollectArgs {
    /// Samples T; defaults to the minimum for the horizon.
    #[arg(long)]
    samples: Option<usize>,
    /// Horizon the archive must serve.
    #[arg(long = "L", default_value_t = 20)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Excite the generator inputs only; demand stays zero.
    #[arg(long)]
    inputs_only: bool,
}

#[derive(Args, Debug)]
struct SetpointArgs {
    /// Demand per bus in file numbering, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "schedule")]
    demand: Vec<f64>,
    /// Take the demand of segment `--segment` from a schedule instead.
    #[arg(long, conflicts_with = "demand")]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "schedule")]
    segment: usize,
    #[arg(long, default_value = "equal")]
    sharing: String,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[arg(long, default_value = "configs/nine_bus_schedule.toml")]
    schedule: PathBuf,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    /// Generation sharing policy for the setpoints (`equal`, `inertia`).
    #[arg(long, default_value = "equal")]
    sharing: String,
    /// Settling threshold on ‖ω_G‖∞.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Leave wall-clock solve times out of the diagnostics CSV, so that
    /// reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Replay the inputs `u` of a trajectory CSV; otherwise hold the
    /// initial setpoint's generation.
    #[arg(long)]
    inputs: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeepcFlags {
    /// Data archive CSV; collected on the fly from `--seed` if omitted.
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Prediction horizon.
    #[arg(long = "L", default_value_t = 20)]
    horizon: usize,
    #[arg(long, default_value_t = 10.0)]
    q_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    r_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
}

#[derive(Args, Debug)]
struct DroopFlags {
    /// Uniform droop gain.
    #[arg(long = "K", default_value_t = DEFAULT_GAIN)]
    gain: f64,
    /// Per-generator gains, comma separated (overrides `--K`).
    #[arg(long, value_delimiter = ',')]
    gains: Option<Vec<f64>>,
    /// Fixed offset p̃, comma separated; default is the initial setpoint.
    #[arg(long, value_delimiter = ',')]
    p_tilde: Option<Vec<f64>>,
    /// Move p̃ to the new setpoint at every demand change.
    #[arg(long)]
    retarget: bool,
}

#[derive(Args, Debug)]
struct DeepcArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    deepc: DeepcFlags,
}

#[derive(Args, Debug)]
struct DroopArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    droop: DroopFlags,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    deepc: DeepcFlags,
    #[command(flatten)]
    droop: DroopFlags,
}

/// Exit status for a library error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Validation { .. } | Error::Dimension { .. } => 2,
        Error::Infeasible { .. } => 3,
        Error::Numerical(_) | Error::SingularPencil(_) | Error::UnsupportedIndex { .. } => 4,
    }
}

/// Grid, descriptor model and its quasi-Weierstrass form.
struct Model {
    grid: GridModel,
    sys: DescriptorSystem,
    qw: QuasiWeierstrass,
    report: PencilReport,
}

fn load_model(path: &Path) -> Result<Model, Error> {
    let grid = load_grid(path)?;
    let sys = build_descriptor(&grid, &generator_angle_selector(&grid))?;
    let (report, qw) = analyze(&sys, &Tolerance::default())?;
    let qw = qw.ok_or_else(|| Error::SingularPencil(format!("{}", path.display())))?;
    Ok(Model { grid, sys, qw, report })
}

fn create_out(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn report_text(r: &PencilReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "regular          {}", r.regular);
    let _ = writeln!(s, "q                {}", r.q);
    let _ = writeln!(s, "s                {}", r.s);
    let _ = writeln!(s, "R-controllable   {}", r.r_controllable);
    let _ = writeln!(s, "R-observable     {}", r.r_observable);
    if let Some(l) = r.witness_lambda {
        let _ = writeln!(s, "witness λ        {:.6}{:+.6}i", l.re, l.im);
    }
    let _ = writeln!(s, "finite eigenvalues ({}):", r.finite_eigenvalues.len());
    for l in &r.finite_eigenvalues {
        let _ = writeln!(s, "  {:.9}{:+.9}i  |λ| = {:.9}", l.re, l.im, l.norm());
    }
    s
}

fn sharing(name: &str) -> Result<std::sync::Arc<dyn SharingPolicy>, Error> {
    SharingRegistry::with_defaults().get(name)
}

fn ocp_config(m: &Model, f: &DeepcFlags) -> OcpConfig {
    let mut cfg = OcpConfig::scaled(f.horizon, m.sys.c.nrows(), m.grid.g(), f.q_scale, f.r_scale);
    cfg.ridge = f.ridge;
    cfg
}

fn droop_config(m: &Model, f: &DroopFlags) -> DroopConfig {
    let mut cfg = DroopConfig::uniform(m.grid.g(), f.gain);
    if let Some(k) = &f.gains {
        cfg.gains = Vector::from_vec(k.clone());
    }
    cfg.p_tilde = f.p_tilde.as_ref().map(|p| Vector::from_vec(p.clone()));
    cfg.retarget = f.retarget;
    cfg
}

fn required_length(m: &Model, horizon: usize) -> usize {
    minimum_data_length(horizon, m.qw.q, m.qw.s, m.grid.g(), m.grid.n())
}

fn archive(m: &Model, f: &DeepcFlags, seed: u64) -> Result<DataArchive, Error> {
    let required = required_length(m, f.horizon);
    let a = match &f.archive {
        Some(path) => io::read_archive(path, &m.grid)?,
        None => collect_data(&m.sys, &m.qw, required, seed, 1.0, Excitation::InputsAndDemand)?,
    };
    warn_if_short(a.len(), required);
    Ok(a)
}

fn metrics_of(m: &Model, run: &ClosedLoopRun, schedule: &DemandSchedule, threshold: f64) -> Result<RunMetrics, Error> {
    compute_metrics(&run.trajectory, schedule, &run.setpoints, m.grid.g(), threshold, DEFAULT_HOLD)
}

fn metrics_text(name: &str, metrics: &RunMetrics) -> String {
    let mut s = format!("{name}: threshold {:e}, hold {}\n", metrics.threshold, metrics.hold);
    s.push_str("segment  t_start  t_end  settling   peak_omega        ise     effort\n");
    for (k, seg) in metrics.segments.iter().enumerate() {
        let settle = seg.settling_time.map_or("unsettled".to_string(), |t| t.to_string());
        let _ = writeln!(
            s,
            "{k:>7}  {:>7}  {:>5}  {settle:>9}  {:>10.3e}  {:>9.3e}  {:>9.3e}",
            seg.t_start, seg.t_end, seg.peak_omega, seg.ise, seg.effort
        );
    }
    s
}

fn write_run(m: &Model, out: &Path, run: &ClosedLoopRun, metrics: &RunMetrics, timing: bool) -> Result<(), Error> {
    let name = run.controller;
    io::write_trajectory(out.join(format!("{name}_trajectory.csv")), &m.grid, &run.trajectory)?;
    io::write_diagnostics(out.join(format!("{name}_diagnostics.csv")), &run.diagnostics, timing)?;
    write_text(&out.join(format!("{name}_metrics.txt")), &metrics_text(name, metrics))
}

fn closed_loop(
    m: &Model,
    name: &str,
    a: Option<&DataArchive>,
    ocp: &OcpConfig,
    droop: &DroopConfig,
    sc: &ScenarioArgs,
) -> Result<(ClosedLoopRun, DemandSchedule), Error> {
    let schedule = DemandSchedule::load(&sc.schedule, &m.grid)?;
    let policy = sharing(&sc.sharing)?;
    let ctx = ControllerContext { grid: &m.grid, sys: &m.sys, qw: &m.qw, archive: a, ocp, droop };
    let mut ctrl = ControllerRegistry::with_defaults().create(name, &ctx)?;
    let run = run_closed_loop(&m.grid, &m.sys, &m.qw, ctrl.as_mut(), &schedule, sc.steps, policy.as_ref())?;
    Ok((run, schedule))
}

fn run(cli: Cli) -> Result<(), Error> {
    let m = load_model(&cli.grid)?;
    create_out(&cli.out)?;
    let out = cli.out.as_path();
    match cli.cmd {
        Command::Analyze => {
            print!("{}", report_text(&m.report));
            io::write_pencil_report(out.join("pencil.toml"), &m.report)?;
        }
        Command::Collect(c) => {
            let required = required_length(&m, c.horizon);
            let samples = c.samples.unwrap_or(required);
            warn_if_short(samples, required);
            let excitation = if c.inputs_only { Excitation::InputsOnly } else { Excitation::InputsAndDemand };
            let a = collect_data(&m.sys, &m.qw, samples, cli.seed, c.amplitude, excitation)?;
            let path = out.join("archive.csv");
            io::write_archive(&path, &m.grid, &a)?;
            println!("T = {samples} (minimum {required}), excitation order {}", a.pe_order_verified);
            info!("wrote {}", path.display());
        }
        Command::Setpoint(c) => {
            let demand = match &c.schedule {
                Some(path) => {
                    let s = DemandSchedule::load(path, &m.grid)?;
                    let seg = s.segments().get(c.segment).ok_or_else(|| {
                        Error::validation("segment", format!("schedule has {} segments", s.segments().len()))
                    })?;
                    seg.1.clone()
                }
                None => m.grid.bus_vector_from_file(&c.demand)?,
            };
            let sp = compute_setpoint(&m.grid, &m.sys, &demand, sharing(&c.sharing)?.as_ref())?;
            let path = out.join("setpoint.toml");
            io::write_setpoint(&path, &m.grid, &sp)?;
            print!("{}", fs::read_to_string(&path).map_err(|source| Error::Io { path, source })?);
        }
        Command::Simulate(c) => {
            let sc = &c.scenario;
            let schedule = DemandSchedule::load(&sc.schedule, &m.grid)?;
            let sp0 = compute_setpoint(&m.grid, &m.sys, schedule.demand_at(0), sharing(&sc.sharing)?.as_ref())?;
            let u = match &c.inputs {
                Some(path) => {
                    let mut u = io::read_trajectory(path, &m.grid)?.u;
                    if u.len() < sc.steps {
                        return Err(Error::dimension("input samples", sc.steps, u.len()));
                    }
                    u.truncate(sc.steps);
                    u
                }
                None => vec![sp0.u_s.clone(); sc.steps],
            };
            let w: Vec<Vector> = (0..sc.steps).map(|t| schedule.demand_at(t).clone()).collect();
            let traj = simulate(&m.sys, &m.qw, &sp0.x_s, &u, &w)?;
            io::write_trajectory(out.join("trajectory.csv"), &m.grid, &traj)?;
        }
        Command::Deepc(c) => {
            let a = archive(&m, &c.deepc, cli.seed)?;
            let ocp = ocp_config(&m, &c.deepc);
            let droop = DroopConfig::uniform(m.grid.g(), DEFAULT_GAIN);
            let (run, schedule) = closed_loop(&m, "deepc", Some(&a), &ocp, &droop, &c.scenario)?;
            let metrics = metrics_of(&m, &run, &schedule, c.scenario.threshold)?;
            write_run(&m, out, &run, &metrics, !c.scenario.no_timing)?;
            print!("{}", metrics_text("deepc", &metrics));
        }
        Command::Droop(c) => {
            let droop = droop_config(&m, &c.droop);
            let ocp = OcpConfig::standard(m.sys.c.nrows(), m.grid.g());
            let (run, schedule) = closed_loop(&m, "droop", None, &ocp, &droop, &c.scenario)?;
            let metrics = metrics_of(&m, &run, &schedule, c.scenario.threshold)?;
            write_run(&m, out, &run, &metrics, !c.scenario.no_timing)?;
            print!("{}", metrics_text("droop", &metrics));
        }
        Command::Compare(c) => {
            let a = archive(&m, &c.deepc, cli.seed)?;
            let sc = &c.scenario;
            let schedule = DemandSchedule::load(&sc.schedule, &m.grid)?;
            let report = ddpc_core::metrics::compare(
                &m.grid,
                &m.sys,
                &m.qw,
                &a,
                &ocp_config(&m, &c.deepc),
                &droop_config(&m, &c.droop),
                &schedule,
                sc.steps,
                sharing(&sc.sharing)?.as_ref(),
                sc.threshold,
            )?;
            write_run(&m, out, &report.deepc, &report.deepc_metrics, !c.scenario.no_timing)?;
            write_run(&m, out, &report.droop, &report.droop_metrics, !c.scenario.no_timing)?;
            let table = report.table();
            write_text(&out.join("comparison.txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

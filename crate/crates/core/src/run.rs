//! Command implementations behind the CLI: simulation runs, stability
//! tables and preset sweeps, with their CSV and manifest outputs.
//!
//! Numbers are written with 12 significant digits, `.` as decimal
//! separator and LF line endings.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::error::{SolverError, StabilityError};
use crate::grid::{ClampCounter, RingGrid};
use crate::model::PressureLaw;
use crate::scenarios::{compute_metrics, Preset, StabilityMetrics};
use crate::stability::{stability_map, Linspace, StabilityPoint};
use crate::stepper::{simulate_partial, TrafficState, Trajectory};

pub const SOLVER_NAME: &str = env!("CARGO_PKG_NAME");
pub const SOLVER_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("solver error: {0}")]
    Solver(#[from] SolverError),
    #[error("stability error: {0}")]
    Stability(#[from] StabilityError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    /// 0 success, 2 configuration, 3 solver blow-up, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Stability(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Formats like C's `%.12g`.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    const DIGITS: i32 = 12;
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..DIGITS).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn format_optional(x: Option<f64>) -> String {
    x.map_or_else(|| "none".into(), format_number)
}

/// Parses `start:end:count`.
pub fn parse_range(text: &str) -> Result<Linspace, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || CliError::Usage(format!("range {text:?} must look like start:end:count"));
    match parts.as_slice() {
        [a, b, n] => {
            let start: f64 = a.trim().parse().map_err(|_| bad())?;
            let end: f64 = b.trim().parse().map_err(|_| bad())?;
            let count: usize = n.trim().parse().map_err(|_| bad())?;
            if count == 0 || !start.is_finite() || !end.is_finite() {
                return Err(bad());
            }
            Ok(Linspace::new(start, end, count))
        }
        [a] => a.trim().parse().map(Linspace::single).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

/// Result of one simulation run.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub config: RunConfig,
    pub trajectory: Trajectory,
    pub metrics: StabilityMetrics,
    pub mass_drift: f64,
    pub error: Option<SolverError>,
}

impl SimulationReport {
    pub fn summary_line(&self) -> String {
        format!(
            "final_amplitude={} convergence_time={} mass_drift={}",
            format_number(self.metrics.final_amplitude),
            format_optional(self.metrics.convergence_time),
            format_number(self.mass_drift),
        )
    }

    fn clamp_events(&self) -> u64 {
        self.trajectory.diagnostics.last().map_or(0, |d| d.clamp_events)
    }
}

/// Per-sample relative drift of the worst class.
fn sample_drifts(traj: &Trajectory) -> Vec<f64> {
    let Some(first) = traj.diagnostics.first() else {
        return Vec::new();
    };
    traj.diagnostics
        .iter()
        .map(|d| {
            d.class_masses
                .iter()
                .zip(&first.class_masses)
                .map(|(m, m0)| if *m0 == 0.0 { 0.0 } else { ((m - m0) / m0).abs() })
                .fold(0.0, f64::max)
        })
        .collect()
}

fn write_fields(path: &Path, report: &SimulationReport, grid: &RingGrid, pl: &PressureLaw) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let traj = &report.trajectory;
    let mixed = traj.snapshots.first().is_some_and(TrafficState::is_mixed);
    if mixed {
        writeln!(w, "t,x,rho,v,rho_h,rho_c,v_h,v_c")?;
    } else {
        writeln!(w, "t,x,rho,v")?;
    }
    let cfg = &report.config;
    let stride = ((cfg.field_every / cfg.sample_every).round() as usize).max(1);
    let last = traj.len().saturating_sub(1);
    let mut clamps = ClampCounter::default();
    for (idx, (t, state)) in traj.times.iter().zip(&traj.snapshots).enumerate() {
        if idx % stride != 0 && idx != last {
            continue;
        }
        let t = format_number(*t);
        match state {
            TrafficState::Single(f) => {
                let v = f.velocities(pl, &mut clamps);
                for (i, (rho, v)) in f.rho.iter().zip(&v).enumerate() {
                    writeln!(
                        w,
                        "{t},{},{},{}",
                        format_number(grid.cell_center(i)),
                        format_number(*rho),
                        format_number(*v)
                    )?;
                }
            }
            TrafficState::Mixed(m) => {
                let (vh, vc) = m.velocities(pl, &mut clamps);
                for i in 0..m.len() {
                    let (rh, rc) = (m.hdv.rho[i], m.cav.rho[i]);
                    let rs = rh + rc;
                    let v = (rh * vh[i] + rc * vc[i]) / rs;
                    writeln!(
                        w,
                        "{t},{},{},{},{},{},{},{}",
                        format_number(grid.cell_center(i)),
                        format_number(rs),
                        format_number(v),
                        format_number(rh),
                        format_number(rc),
                        format_number(vh[i]),
                        format_number(vc[i])
                    )?;
                }
            }
        }
    }
    if let Some(e) = &report.error {
        writeln!(w, "# ABORTED: {e}")?;
    }
    w.flush()
}

fn write_metrics(path: &Path, report: &SimulationReport) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,amplitude,velocity_amplitude,mass_drift,clamp_events")?;
    let drifts = sample_drifts(&report.trajectory);
    for ((t, d), drift) in report.trajectory.times.iter().zip(&report.trajectory.diagnostics).zip(&drifts) {
        writeln!(
            w,
            "{},{},{},{},{}",
            format_number(*t),
            format_number(d.amplitude),
            format_number(d.velocity_amplitude),
            format_number(*drift),
            d.clamp_events
        )?;
    }
    let m = &report.metrics;
    writeln!(w, "# peak_amplitude={}", format_number(m.peak_amplitude))?;
    writeln!(w, "# final_amplitude={}", format_number(m.final_amplitude))?;
    writeln!(w, "# convergence_time={}", format_optional(m.convergence_time))?;
    writeln!(w, "# fitted_rate={}", format_number(m.fitted_rate))?;
    writeln!(w, "# max_mass_drift={}", format_number(report.mass_drift))?;
    if let Some(e) = &report.error {
        writeln!(w, "# ABORTED: {e}")?;
    }
    w.flush()
}

fn manifest_header(kind: &str) -> String {
    format!("command={kind}\nsolver={SOLVER_NAME}\nsolver_version={SOLVER_VERSION}\n")
}

fn config_echo(cfg: &RunConfig) -> String {
    cfg.to_text().lines().map(|l| format!("config.{}\n", l.replacen(" = ", "=", 1))).collect()
}

fn write_simulation_manifest(path: &Path, report: &SimulationReport) -> io::Result<()> {
    let mut text = manifest_header("simulate");
    let status = if report.error.is_some() { "failed" } else { "ok" };
    text.push_str(&format!("status={status}\n"));
    if let Some(e) = &report.error {
        text.push_str(&format!("error={e}\n"));
    }
    let steps = report.trajectory.times.last().map_or(0, |t| (t / report.config.dt).round() as u64);
    text.push_str(&format!("steps={steps}\n"));
    text.push_str(&format!("samples={}\n", report.trajectory.len()));
    text.push_str(&format!("max_mass_drift={}\n", format_number(report.mass_drift)));
    text.push_str(&format!("clamp_events={}\n", report.clamp_events()));
    text.push_str(&format!("peak_amplitude={}\n", format_number(report.metrics.peak_amplitude)));
    text.push_str(&format!("final_amplitude={}\n", format_number(report.metrics.final_amplitude)));
    text.push_str(&format!("convergence_time={}\n", format_optional(report.metrics.convergence_time)));
    text.push_str(&config_echo(&report.config));
    fs::write(path, text)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Runs the configured scenario and writes `fields.csv`, `metrics.csv` and
/// `manifest.txt` into the output directory. A solver failure still writes
/// the partial outputs (with an `# ABORTED` footer) before returning the
/// error.
pub fn run_simulate(cfg: &RunConfig) -> Result<SimulationReport, CliError> {
    cfg.validate().map_err(|(key, message)| ConfigError { key: key.into(), line: None, message })?;
    let grid = cfg.grid();
    let step = cfg.step_config();
    let initial =
        cfg.scenario().initial_state(&grid, &cfg.fundamental_diagram(), &cfg.pressure_law(), &cfg.profile())?;
    let (trajectory, error) = simulate_partial(&initial, &grid, &step, cfg.duration, cfg.sample_every);
    let metrics = compute_metrics(&trajectory, cfg.threshold_fraction);
    let mass_drift = trajectory.max_mass_drift();
    let report = SimulationReport { config: cfg.clone(), trajectory, metrics, mass_drift, error };

    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let fields = dir.join("fields.csv");
    write_fields(&fields, &report, &grid, &cfg.pressure_law()).map_err(io_err(&fields))?;
    let metrics = dir.join("metrics.csv");
    write_metrics(&metrics, &report).map_err(io_err(&metrics))?;
    let manifest = dir.join("manifest.txt");
    write_simulation_manifest(&manifest, &report).map_err(io_err(&manifest))?;

    match &report.error {
        Some(e) => Err(CliError::Solver(e.clone())),
        None => Ok(report),
    }
}

/// Tabulates the stability criterion and dispersion roots into
/// `stability.csv`.
pub fn run_stability(
    cfg: &RunConfig,
    rho: &Linspace,
    k: &Linspace,
    lookahead: &Linspace,
) -> Result<Vec<StabilityPoint>, CliError> {
    cfg.validate().map_err(|(key, message)| ConfigError { key: key.into(), line: None, message })?;
    let points = stability_map(rho, k, lookahead, cfg.tau, &cfg.fundamental_diagram(), &cfg.pressure_law())?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let path = dir.join("stability.csv");
    let write = || -> io::Result<()> {
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "rho0,k,lookahead,margin,re_sigma_max,agree_flag")?;
        for p in &points {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                format_number(p.rho0),
                format_number(p.k),
                format_number(p.lookahead),
                format_number(p.margin),
                format_number(p.max_growth),
                u8::from(p.agrees())
            )?;
        }
        w.flush()
    };
    write().map_err(io_err(&path))?;
    let disagreements = points.iter().filter(|p| !p.agrees()).count();
    let mut text = manifest_header("stability");
    text.push_str(&format!(
        "status=ok\nrows={}\ndisagreements={disagreements}\nrange.rho={}:{}:{}\nrange.k={}:{}:{}\nrange.lookahead={}:{}:{}\n",
        points.len(),
        format_number(rho.start),
        format_number(rho.end),
        rho.count,
        format_number(k.start),
        format_number(k.end),
        k.count,
        format_number(lookahead.start),
        format_number(lookahead.end),
        lookahead.count,
    ));
    text.push_str(&config_echo(cfg));
    let manifest = dir.join("manifest.txt");
    fs::write(&manifest, text).map_err(io_err(&manifest))?;
    Ok(points)
}

/// One row of a sweep comparison table.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub label: String,
    pub config: RunConfig,
    pub metrics: Option<StabilityMetrics>,
    pub mass_drift: f64,
    pub error: Option<String>,
}

/// Configuration of one preset member, rooted at `out`.
pub fn sweep_member_config(spec: &crate::scenarios::ScenarioSpec, out: &Path) -> RunConfig {
    RunConfig {
        kind: spec.kind,
        penetration: spec.penetration,
        lookahead: spec.lookahead,
        duration: spec.duration,
        output_dir: out.join(spec.label()),
        ..RunConfig::default()
    }
}

/// Runs every member of `preset` concurrently, each into its own
/// subdirectory, then writes `comparison.csv` and `manifest.txt` into `out`.
pub fn run_sweep(preset: Preset, out: &Path) -> Result<Vec<SweepRow>, CliError> {
    ensure_dir(out)?;
    let configs: Vec<RunConfig> = preset.scenarios().iter().map(|s| sweep_member_config(s, out)).collect();
    let results: Vec<Result<SimulationReport, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs.iter().map(|c| scope.spawn(move || run_simulate(c))).collect();
        handles.into_iter().map(|h| h.join().expect("sweep member panicked")).collect()
    });

    let mut rows = Vec::with_capacity(results.len());
    for (cfg, result) in configs.into_iter().zip(results) {
        let label = cfg.scenario().label();
        rows.push(match result {
            Ok(r) => SweepRow { label, config: cfg, metrics: Some(r.metrics), mass_drift: r.mass_drift, error: None },
            Err(e @ CliError::Io { .. }) => return Err(e),
            Err(e) => SweepRow { label, config: cfg, metrics: None, mass_drift: f64::NAN, error: Some(e.to_string()) },
        });
    }

    let path = out.join("comparison.csv");
    let write = || -> io::Result<()> {
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(
            w,
            "scenario,kind,penetration,lookahead,duration,status,peak_amplitude,amplitude_600,final_amplitude,convergence_time,fitted_rate,max_mass_drift"
        )?;
        for row in &rows {
            let c = &row.config;
            let (peak, a600, fin, conv, rate) = match &row.metrics {
                Some(m) => (
                    format_number(m.peak_amplitude),
                    format_optional(m.amplitude_at(600.0)),
                    format_number(m.final_amplitude),
                    format_optional(m.convergence_time),
                    format_number(m.fitted_rate),
                ),
                None => ("nan".into(), "nan".into(), "nan".into(), "none".into(), "nan".into()),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{peak},{a600},{fin},{conv},{rate},{}",
                row.label,
                c.kind,
                format_number(c.penetration),
                format_number(c.lookahead),
                format_number(c.duration),
                if row.error.is_some() { "failed" } else { "ok" },
                format_number(row.mass_drift)
            )?;
        }
        w.flush()
    };
    write().map_err(io_err(&path))?;

    let mut text = manifest_header("sweep");
    text.push_str(&format!("preset={preset}\nruns={}\n", rows.len()));
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    text.push_str(&format!("failed_runs={failed}\n"));
    let worst = rows.iter().map(|r| r.mass_drift).fold(0.0, f64::max);
    text.push_str(&format!("max_mass_drift={}\n", format_number(worst)));
    for r in &rows {
        text.push_str(&format!("run={}\n", r.label));
    }
    let manifest = out.join("manifest.txt");
    fs::write(&manifest, text).map_err(io_err(&manifest))?;

    if let Some(row) = rows.iter().find(|r| r.error.is_some()) {
        return Err(CliError::Solver(SolverError::InvalidRequest(format!(
            "sweep member {} failed: {}",
            row.label,
            row.error.as_deref().unwrap_or_default()
        ))));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(56.0), "56");
        assert_eq!(format_number(0.05), "0.05");
        assert_eq!(format_number(-0.0542585005468535), "-0.0542585005469");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_number(1e-15), "1e-15");
        assert_eq!(format_number(2.5e-13), "2.5e-13");
        assert_eq!(format_number(123456789012345.0), "1.23456789012e+14");
        assert_eq!(format_number(1055.2153846153846), "1055.21538462");
        assert_eq!(format_number(0.0001), "0.0001");
        assert_eq!(format_number(f64::NAN), "nan");
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("40:60:3").unwrap(), Linspace::new(40.0, 60.0, 3));
        assert_eq!(parse_range("56").unwrap(), Linspace::single(56.0));
        assert!(parse_range("1:2").is_err());
        assert!(parse_range("1:2:0").is_err());
        assert!(parse_range("a:2:3").is_err());
    }

    #[test]
    fn exit_codes() {
        let cfg = CliError::Config(ConfigError { key: "dt".into(), line: Some(1), message: "bad".into() });
        assert_eq!(cfg.exit_code(), 2);
        assert_eq!(CliError::Solver(SolverError::NonFinite { cell: 0 }).exit_code(), 3);
        let io = CliError::Io { path: "x".into(), source: io::Error::other("boom") };
        assert_eq!(io.exit_code(), 4);
    }
}

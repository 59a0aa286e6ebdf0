//! Initial conditions, the reference scenario roster and convergence
//! metrics computed from trajectories.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::SolverError;
use crate::grid::{ClassField, MixedField, RingGrid};
use crate::model::{FundamentalDiagram, PressureLaw};
use crate::stepper::{TrafficState, Trajectory};

/// CAV share inside the segregated band, and outside it.
pub const SEGREGATED_INSIDE: f64 = 0.999;
pub const SEGREGATED_OUTSIDE: f64 = 0.001;

/// Default fraction of the initial amplitude that counts as converged.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.1;

/// `rho(x) = base + amplitude * sin(2 pi x / length)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidalProfile {
    pub base: f64,
    pub amplitude: f64,
    pub length: f64,
}

impl SinusoidalProfile {
    /// `0.4 rho_j + 0.1 rho_j sin(2 pi x / L)`.
    pub fn standard(fd: &FundamentalDiagram, length: f64) -> Self {
        Self::from_fractions(fd, length, 0.4, 0.1)
    }

    /// Base and amplitude given as fractions of the jam density.
    pub fn from_fractions(fd: &FundamentalDiagram, length: f64, base: f64, amplitude: f64) -> Self {
        Self { base: base * fd.rho_j, amplitude: amplitude * fd.rho_j, length }
    }

    pub fn density_at(&self, x: f64) -> f64 {
        self.base + self.amplitude * (2.0 * PI * x / self.length).sin()
    }

    /// Cell-centre samples on `grid`.
    pub fn sample(&self, grid: &RingGrid) -> Vec<f64> {
        grid.cell_centers().map(|x| self.density_at(x)).collect()
    }
}

/// Density and equilibrium velocity of the reference sinusoidal start.
pub fn sinusoidal_ic(grid: &RingGrid, fd: &FundamentalDiagram) -> (Vec<f64>, Vec<f64>) {
    profile_ic(grid, fd, &SinusoidalProfile::standard(fd, grid.length()))
}

pub fn profile_ic(grid: &RingGrid, fd: &FundamentalDiagram, profile: &SinusoidalProfile) -> (Vec<f64>, Vec<f64>) {
    let rho = profile.sample(grid);
    let v = rho.iter().map(|&r| fd.speed(r)).collect();
    (rho, v)
}

fn check_penetration(r: f64, open: bool) -> Result<(), SolverError> {
    let ok = if open { r > 0.0 && r < 1.0 } else { (0.0..=1.0).contains(&r) };
    if ok {
        Ok(())
    } else {
        Err(SolverError::InvalidRequest(format!("penetration {r} out of range")))
    }
}

fn split(total: &[f64], v: &[f64], cav_share: impl Fn(usize) -> f64, pl: &PressureLaw) -> MixedField {
    let cav: Vec<f64> = total.iter().enumerate().map(|(i, &rs)| cav_share(i) * rs).collect();
    let hdv: Vec<f64> = total.iter().zip(&cav).map(|(rs, rc)| rs - rc).collect();
    MixedField {
        hdv: ClassField::from_primitive_with_pressure(&hdv, v, total, pl),
        cav: ClassField::from_primitive_with_pressure(&cav, v, total, pl),
    }
}

/// Proportional split: `rho_c = r rho_s`, `rho_h = rho_s - rho_c` in every
/// cell, both classes at `V(rho_s)`.
pub fn even_mix_ic(
    grid: &RingGrid,
    fd: &FundamentalDiagram,
    pl: &PressureLaw,
    penetration: f64,
    profile: &SinusoidalProfile,
) -> Result<MixedField, SolverError> {
    check_penetration(penetration, false)?;
    let (total, v) = profile_ic(grid, fd, profile);
    Ok(split(&total, &v, |_| penetration, pl))
}

/// CAV share of the total density at `x` for the segregated layout: a band
/// of width `r L` centred on the ring's midpoint.
pub fn segregated_cav_share(x: f64, length: f64, penetration: f64) -> f64 {
    let lo = 0.5 * (1.0 - penetration) * length;
    let hi = 0.5 * (1.0 + penetration) * length;
    if lo < x && x < hi {
        SEGREGATED_INSIDE
    } else {
        SEGREGATED_OUTSIDE
    }
}

/// CAVs packed into one band, HDVs elsewhere.
pub fn segregated_mix_ic(
    grid: &RingGrid,
    fd: &FundamentalDiagram,
    pl: &PressureLaw,
    penetration: f64,
    profile: &SinusoidalProfile,
) -> Result<MixedField, SolverError> {
    check_penetration(penetration, true)?;
    let (total, v) = profile_ic(grid, fd, profile);
    Ok(split(&total, &v, |i| segregated_cav_share(grid.cell_center(i), grid.length(), penetration), pl))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    SingleClass,
    MixedEven,
    MixedSegregated,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::SingleClass => "single_class",
            ScenarioKind::MixedEven => "mixed_even",
            ScenarioKind::MixedSegregated => "mixed_segregated",
        }
    }

    pub fn is_mixed(&self) -> bool {
        !matches!(self, ScenarioKind::SingleClass)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_class" => Ok(ScenarioKind::SingleClass),
            "mixed_even" => Ok(ScenarioKind::MixedEven),
            "mixed_segregated" => Ok(ScenarioKind::MixedSegregated),
            other => {
                Err(format!("unknown scenario kind {other:?} (expected single_class, mixed_even or mixed_segregated)"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// CAV fraction of the total density; ignored for single-class runs.
    pub penetration: f64,
    /// Look-ahead distance (m).
    pub lookahead: f64,
    /// Simulated time (s).
    pub duration: f64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, penetration: f64, lookahead: f64, duration: f64) -> Result<Self, SolverError> {
        if !(0.0..=1.0).contains(&penetration) {
            return Err(SolverError::InvalidRequest(format!("penetration {penetration} out of [0, 1]")));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(SolverError::InvalidRequest(format!("duration must be positive, got {duration}")));
        }
        if !(lookahead.is_finite() && lookahead >= 0.0) {
            return Err(SolverError::InvalidRequest(format!("look-ahead must be non-negative, got {lookahead}")));
        }
        Ok(Self { kind, penetration, lookahead, duration })
    }

    /// Short label used for output directories.
    pub fn label(&self) -> String {
        match self.kind {
            ScenarioKind::SingleClass => format!("single_ld{}", self.lookahead),
            kind => format!("{}_r{}_ld{}", kind.name(), self.penetration, self.lookahead),
        }
    }

    pub fn initial_state(
        &self,
        grid: &RingGrid,
        fd: &FundamentalDiagram,
        pl: &PressureLaw,
        profile: &SinusoidalProfile,
    ) -> Result<TrafficState, SolverError> {
        Ok(match self.kind {
            ScenarioKind::SingleClass => {
                let (rho, v) = profile_ic(grid, fd, profile);
                TrafficState::Single(ClassField::from_primitive(&rho, &v, pl))
            }
            ScenarioKind::MixedEven => TrafficState::Mixed(even_mix_ic(grid, fd, pl, self.penetration, profile)?),
            ScenarioKind::MixedSegregated => {
                TrafficState::Mixed(segregated_mix_ic(grid, fd, pl, self.penetration, profile)?)
            }
        })
    }
}

/// Named groups of reference scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    LookaheadSweep,
    MixedEvenSweep,
    MixedSegregatedSweep,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::LookaheadSweep, Preset::MixedEvenSweep, Preset::MixedSegregatedSweep];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::LookaheadSweep => "lookahead_sweep",
            Preset::MixedEvenSweep => "mixed_even_sweep",
            Preset::MixedSegregatedSweep => "mixed_segregated_sweep",
        }
    }

    /// Member scenarios. Long runs (1200 s) are used where convergence is
    /// slow: look-ahead 15 m and 1000 m, and penetrations of 10% and 20%.
    pub fn scenarios(&self) -> Vec<ScenarioSpec> {
        let spec = |kind, penetration, lookahead, duration| ScenarioSpec { kind, penetration, lookahead, duration };
        match self {
            Preset::LookaheadSweep => vec![
                spec(ScenarioKind::SingleClass, 0.0, 0.0, 600.0),
                spec(ScenarioKind::SingleClass, 0.0, 15.0, 1200.0),
                spec(ScenarioKind::SingleClass, 0.0, 100.0, 600.0),
                spec(ScenarioKind::SingleClass, 0.0, 1000.0, 1200.0),
            ],
            Preset::MixedEvenSweep | Preset::MixedSegregatedSweep => {
                let kind = if *self == Preset::MixedEvenSweep {
                    ScenarioKind::MixedEven
                } else {
                    ScenarioKind::MixedSegregated
                };
                vec![spec(kind, 0.1, 100.0, 1200.0), spec(kind, 0.2, 100.0, 1200.0), spec(kind, 0.4, 100.0, 600.0)]
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown preset {s:?}; valid presets: {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityMetrics {
    /// `(t, max - min of total density)` per sample.
    pub amplitude_series: Vec<(f64, f64)>,
    /// `(t, max - min of velocity)` per sample; HDV velocity for mixed runs.
    pub velocity_amplitude_series: Vec<(f64, f64)>,
    pub peak_amplitude: f64,
    pub final_amplitude: f64,
    /// First sample time from which the amplitude stays below the threshold
    /// until the end of the run.
    pub convergence_time: Option<f64>,
    /// Least-squares slope of `ln(amplitude)` over the first quarter (1/s).
    pub fitted_rate: f64,
}

impl StabilityMetrics {
    /// Amplitude of the sample closest to `t`.
    pub fn amplitude_at(&self, t: f64) -> Option<f64> {
        self.amplitude_series.iter().min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs())).map(|p| p.1)
    }
}

/// Least-squares slope of `ln(amplitude)` against time over `[t0, t1]`;
/// non-positive amplitudes are skipped. Returns 0 with fewer than two points.
pub fn fit_log_rate(series: &[(f64, f64)], t0: f64, t1: f64) -> f64 {
    let pts: Vec<(f64, f64)> =
        series.iter().filter(|(t, a)| *t >= t0 && *t <= t1 && *a > 0.0).map(|(t, a)| (*t, a.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (num, den) =
        pts.iter().fold((0.0, 0.0), |(num, den), (t, l)| (num + (t - mt) * (l - ml), den + (t - mt) * (t - mt)));
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Time from which every remaining amplitude is below `threshold`.
fn sustained_below(series: &[(f64, f64)], threshold: f64) -> Option<f64> {
    match series.iter().rposition(|(_, a)| *a >= threshold) {
        None => series.first().map(|p| p.0),
        Some(i) => series.get(i + 1).map(|p| p.0),
    }
}

/// Metrics of an amplitude series; see [`compute_metrics`].
pub fn metrics_from_series(
    amplitude_series: Vec<(f64, f64)>,
    velocity_amplitude_series: Vec<(f64, f64)>,
    threshold_fraction: f64,
) -> StabilityMetrics {
    let initial = amplitude_series.first().map_or(0.0, |p| p.1);
    let peak_amplitude = amplitude_series.iter().map(|p| p.1).fold(0.0, f64::max);
    let final_amplitude = amplitude_series.last().map_or(0.0, |p| p.1);
    let convergence_time =
        if initial == 0.0 { Some(0.0) } else { sustained_below(&amplitude_series, threshold_fraction * initial) };
    let fitted_rate = match (amplitude_series.first(), amplitude_series.last()) {
        (Some(first), Some(last)) => {
            let t1 = first.0 + 0.25 * (last.0 - first.0);
            fit_log_rate(&amplitude_series, first.0, t1)
        }
        _ => 0.0,
    };
    StabilityMetrics {
        amplitude_series,
        velocity_amplitude_series,
        peak_amplitude,
        final_amplitude,
        convergence_time,
        fitted_rate,
    }
}

/// Amplitude-based convergence metrics of a trajectory.
pub fn compute_metrics(trajectory: &Trajectory, threshold_fraction: f64) -> StabilityMetrics {
    let amps = trajectory.times.iter().zip(&trajectory.diagnostics).map(|(t, d)| (*t, d.amplitude)).collect();
    let vel = trajectory.times.iter().zip(&trajectory.diagnostics).map(|(t, d)| (*t, d.velocity_amplitude)).collect();
    metrics_from_series(amps, vel, threshold_fraction)
}

//! Plain-text run configuration: one `key = value` pair per line, `#`
//! starts a comment. Omitted keys take the reference values.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::grid::RingGrid;
use crate::model::{FundamentalDiagram, ModelParams, PressureLaw};
use crate::nonlocal::LookaheadSpec;
use crate::scenarios::{ScenarioKind, ScenarioSpec, SinusoidalProfile};
use crate::stepper::StepConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: key {}: {}", self.key, self.message),
            None => write!(f, "key {}: {}", self.key, self.message),
        }
    }
}

/// Every scalar that defines a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub length: f64,
    pub dx: f64,
    pub dt: f64,
    pub tau: f64,
    pub v_f: f64,
    pub rho_f: f64,
    pub rho_j: f64,
    pub pressure_scale: f64,
    pub lookahead: f64,
    pub cfl_limit: f64,
    pub kind: ScenarioKind,
    pub penetration: f64,
    pub duration: f64,
    pub sample_every: f64,
    pub field_every: f64,
    pub base_fraction: f64,
    pub perturbation_fraction: f64,
    pub threshold_fraction: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            length: 1000.0,
            dx: 5.0,
            dt: 0.05,
            tau: 3.0,
            v_f: 20.0,
            rho_f: 10.0,
            rho_j: 140.0,
            pressure_scale: 8.0,
            lookahead: 0.0,
            cfl_limit: 0.9,
            kind: ScenarioKind::SingleClass,
            penetration: 0.0,
            duration: 600.0,
            sample_every: 1.0,
            field_every: 10.0,
            base_fraction: 0.4,
            perturbation_fraction: 0.1,
            threshold_fraction: 0.1,
            output_dir: PathBuf::from("out"),
        }
    }
}

const KEYS: [&str; 19] = [
    "length",
    "dx",
    "dt",
    "tau",
    "v_f",
    "rho_f",
    "rho_j",
    "pressure_scale",
    "lookahead",
    "cfl_limit",
    "kind",
    "penetration",
    "duration",
    "sample_every",
    "field_every",
    "base_fraction",
    "perturbation_fraction",
    "threshold_fraction",
    "output_dir",
];

fn is_multiple(span: f64, step: f64) -> bool {
    let r = span / step;
    r.round() >= 1.0 && (r - r.round()).abs() <= 1e-6
}

impl RunConfig {
    fn number_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "length" => &mut self.length,
            "dx" => &mut self.dx,
            "dt" => &mut self.dt,
            "tau" => &mut self.tau,
            "v_f" => &mut self.v_f,
            "rho_f" => &mut self.rho_f,
            "rho_j" => &mut self.rho_j,
            "pressure_scale" => &mut self.pressure_scale,
            "lookahead" => &mut self.lookahead,
            "cfl_limit" => &mut self.cfl_limit,
            "penetration" => &mut self.penetration,
            "duration" => &mut self.duration,
            "sample_every" => &mut self.sample_every,
            "field_every" => &mut self.field_every,
            "base_fraction" => &mut self.base_fraction,
            "perturbation_fraction" => &mut self.perturbation_fraction,
            "threshold_fraction" => &mut self.threshold_fraction,
            _ => return None,
        })
    }

    fn number(&self, key: &str) -> Option<f64> {
        self.clone().number_mut(key).map(|v| *v)
    }

    pub fn fundamental_diagram(&self) -> FundamentalDiagram {
        FundamentalDiagram { v_f: self.v_f, rho_f: self.rho_f, rho_j: self.rho_j }
    }

    pub fn pressure_law(&self) -> PressureLaw {
        PressureLaw { scale: self.pressure_scale, rho_f: self.rho_f, rho_j: self.rho_j }
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            fd: self.fundamental_diagram(),
            pl: self.pressure_law(),
            tau: self.tau,
            lookahead: self.lookahead,
        }
    }

    pub fn grid(&self) -> RingGrid {
        RingGrid::new(self.length, self.dx).expect("validated grid")
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig { dt: self.dt, params: self.model_params(), cfl_limit: self.cfl_limit }
    }

    pub fn scenario(&self) -> ScenarioSpec {
        ScenarioSpec {
            kind: self.kind,
            penetration: self.penetration,
            lookahead: self.lookahead,
            duration: self.duration,
        }
    }

    pub fn profile(&self) -> SinusoidalProfile {
        SinusoidalProfile::from_fractions(
            &self.fundamental_diagram(),
            self.length,
            self.base_fraction,
            self.perturbation_fraction,
        )
    }

    /// Checks every invariant; the error names the first offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for key in KEYS {
            if key == "kind" || key == "output_dir" {
                continue;
            }
            let v = self.number(key).expect("numeric key");
            if !v.is_finite() {
                return Err((key, format!("value {v} is not finite")));
            }
        }
        FundamentalDiagram::new(self.v_f, self.rho_f, self.rho_j).map_err(|e| model_key(&e, "rho_f"))?;
        PressureLaw::new(self.pressure_scale, self.rho_f, self.rho_j).map_err(|e| model_key(&e, "rho_j"))?;
        ModelParams::new(self.fundamental_diagram(), self.pressure_law(), self.tau, self.lookahead)
            .map_err(|e| model_key(&e, "tau"))?;
        let grid = RingGrid::new(self.length, self.dx).map_err(|e| {
            let key = if matches!(e, crate::error::GridError::NonPositive { length, .. } if length <= 0.0) {
                "length"
            } else {
                "dx"
            };
            (key, e.to_string())
        })?;
        if !(self.dt > 0.0) {
            return Err(("dt", format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.cfl_limit > 0.0 && self.cfl_limit <= 1.0) {
            return Err(("cfl_limit", format!("must lie in (0, 1], got {}", self.cfl_limit)));
        }
        LookaheadSpec::new(self.lookahead, &grid).map_err(|e| ("lookahead", e.to_string()))?;
        if !(self.duration > 0.0) {
            return Err(("duration", format!("must be positive, got {}", self.duration)));
        }
        if !is_multiple(self.duration, self.dt) {
            return Err(("duration", format!("{} is not a multiple of dt = {}", self.duration, self.dt)));
        }
        if !is_multiple(self.sample_every, self.dt) {
            return Err((
                "sample_every",
                format!("{} is not a positive multiple of dt = {}", self.sample_every, self.dt),
            ));
        }
        if !is_multiple(self.field_every, self.sample_every) {
            return Err((
                "field_every",
                format!("{} is not a positive multiple of sample_every = {}", self.field_every, self.sample_every),
            ));
        }
        let penetration_ok = match self.kind {
            ScenarioKind::MixedSegregated => self.penetration > 0.0 && self.penetration < 1.0,
            _ => (0.0..=1.0).contains(&self.penetration),
        };
        if !penetration_ok {
            return Err(("penetration", format!("{} out of range for {}", self.penetration, self.kind)));
        }
        if !(self.base_fraction > 0.0) {
            return Err(("base_fraction", format!("must be positive, got {}", self.base_fraction)));
        }
        if !(self.perturbation_fraction >= 0.0 && self.perturbation_fraction < self.base_fraction) {
            return Err((
                "perturbation_fraction",
                format!("must lie in [0, base_fraction), got {}", self.perturbation_fraction),
            ));
        }
        if self.base_fraction + self.perturbation_fraction >= 1.0 {
            return Err(("perturbation_fraction", "peak density reaches the jam density".into()));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return Err(("threshold_fraction", format!("must lie in (0, 1), got {}", self.threshold_fraction)));
        }
        Ok(())
    }

    /// Serializes every key; [`parse_config`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match key {
                "kind" => self.kind.to_string(),
                "output_dir" => self.output_dir.display().to_string(),
                k => self.number(k).expect("numeric key").to_string(),
            };
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }
}

fn model_key(e: &crate::error::ModelError, fallback: &'static str) -> (&'static str, String) {
    match e {
        crate::error::ModelError::InvalidParameter { name, reason } => (name, reason.clone()),
        other => (fallback, other.to_string()),
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(&'static str, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |key: &str, message: String| ConfigError { key: key.to_string(), line: Some(line_no), message };
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(line, "expected `key = value`".into()))?;
        let Some(&canonical) = KEYS.iter().find(|k| **k == key) else {
            return Err(err(key, "unknown key".into()));
        };
        if seen.iter().any(|(k, _)| *k == canonical) {
            return Err(err(key, "duplicate key".into()));
        }
        seen.push((canonical, line_no));
        match canonical {
            "kind" => cfg.kind = value.parse().map_err(|e: String| err(key, e))?,
            "output_dir" => {
                if value.is_empty() {
                    return Err(err(key, "empty path".into()));
                }
                cfg.output_dir = PathBuf::from(value);
            }
            k => {
                let parsed: f64 = value.parse().map_err(|_| err(key, format!("malformed number {value:?}")))?;
                *cfg.number_mut(k).expect("numeric key") = parsed;
            }
        }
    }
    cfg.validate().map_err(|(key, message)| ConfigError {
        key: key.to_string(),
        line: seen.iter().find(|(k, _)| *k == key).map(|(_, l)| *l),
        message,
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.lookahead, 0.0);
        assert_eq!(cfg.kind, ScenarioKind::SingleClass);
        assert_eq!(cfg.grid(), RingGrid::standard());
        assert_eq!(cfg.step_config(), StepConfig::standard(0.0));
    }

    #[test]
    fn lookahead_scenario() {
        let cfg = parse_config("lookahead = 100\nduration = 600").unwrap();
        assert_eq!(cfg.lookahead, 100.0);
        assert_eq!(cfg.duration, 600.0);
        assert_eq!(cfg.model_params(), ModelParams::standard(100.0));
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = parse_config("# header\n\n  kind = mixed_even   # trailing\npenetration=0.4\n").unwrap();
        assert_eq!(cfg.kind, ScenarioKind::MixedEven);
        assert_eq!(cfg.penetration, 0.4);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = parse_config("dt = -1").unwrap_err();
        assert_eq!((e.key.as_str(), e.line), ("dt", Some(1)));
        let e = parse_config("\nspeed = 3").unwrap_err();
        assert_eq!((e.key.as_str(), e.line, e.message.as_str()), ("speed", Some(2), "unknown key"));
        let e = parse_config("tau = fast").unwrap_err();
        assert_eq!(e.key, "tau");
        assert!(e.message.contains("malformed"));
        let e = parse_config("dx = 3").unwrap_err();
        assert_eq!(e.key, "dx");
        let e = parse_config("kind = mixed_segregated\npenetration = 0").unwrap_err();
        assert_eq!((e.key.as_str(), e.line), ("penetration", Some(2)));
        let e = parse_config("lookahead = 2000").unwrap_err();
        assert_eq!(e.key, "lookahead");
        let e = parse_config("duration = 1.01").unwrap_err();
        assert_eq!(e.key, "duration");
        let e = parse_config("tau = 1\ntau = 2").unwrap_err();
        assert_eq!(e.line, Some(2));
        let e = parse_config("kind = bus").unwrap_err();
        assert_eq!(e.key, "kind");
        let e = parse_config("rho_f = 150").unwrap_err();
        assert_eq!(e.key, "rho_f");
        let e = parse_config("just words").unwrap_err();
        assert!(e.message.contains("key = value"));
        assert!(e.to_string().starts_with("line 1"));
    }

    #[test]
    fn round_trip_defaults_and_mixed() {
        let cfg = RunConfig::default();
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
        let cfg = parse_config(
            "kind = mixed_segregated\npenetration = 0.2\nlookahead = 100\nduration = 1200\noutput_dir = runs/seg 20",
        )
        .unwrap();
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }

    proptest! {
        #[test]
        fn round_trip_numeric(
            tau in 0.1f64..10.0,
            lookahead in 0.0f64..1000.0,
            penetration in 0.01f64..0.99,
            scale in 0.5f64..20.0,
            pert in 0.0f64..0.3,
        ) {
            let cfg = RunConfig {
                tau,
                lookahead,
                penetration,
                pressure_scale: scale,
                perturbation_fraction: pert,
                kind: ScenarioKind::MixedEven,
                ..RunConfig::default()
            };
            prop_assume!(cfg.validate().is_ok());
            prop_assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
        }
    }
}

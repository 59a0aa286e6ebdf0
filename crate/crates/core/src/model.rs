//! Constitutive laws of the model: the equilibrium speed-density relation,
//! the pressure (hesitation) function and the global physical parameters.
//!
//! Units are fixed across the crate: densities in veh/km, speeds in m/s,
//! positions in m and times in s. Derivatives with respect to density are
//! therefore in (m/s)/(veh/km).

use crate::error::ModelError;

/// Distance below the jam density at which the pressure law is frozen.
pub const PRESSURE_CAP_OFFSET: f64 = 0.5;

/// Piecewise-linear equilibrium speed law: constant `v_f` up to `rho_f`,
/// a linear ramp down to zero at `rho_j`, and zero beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalDiagram {
    /// Free-flow speed (m/s).
    pub v_f: f64,
    /// Free-flow density (veh/km).
    pub rho_f: f64,
    /// Jam density (veh/km).
    pub rho_j: f64,
}

impl FundamentalDiagram {
    pub fn new(v_f: f64, rho_f: f64, rho_j: f64) -> Result<Self, ModelError> {
        if !(v_f.is_finite() && v_f > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "v_f",
                reason: format!("free-flow speed must be positive, got {v_f}"),
            });
        }
        if !(rho_f.is_finite() && rho_j.is_finite() && 0.0 < rho_f && rho_f < rho_j) {
            return Err(ModelError::InvalidParameter {
                name: "rho_f",
                reason: format!("need 0 < rho_f < rho_j, got rho_f={rho_f}, rho_j={rho_j}"),
            });
        }
        Ok(Self { v_f, rho_f, rho_j })
    }

    /// 20 m/s free flow, 10 veh/km free-flow density, 140 veh/km jam.
    pub fn standard() -> Self {
        Self { v_f: 20.0, rho_f: 10.0, rho_j: 140.0 }
    }

    /// Slope of the congested branch, `-v_f / (rho_j - rho_f)`.
    pub fn ramp_slope(&self) -> f64 {
        -self.v_f / (self.rho_j - self.rho_f)
    }

    /// Equilibrium speed without the domain check; used on hot paths where
    /// densities are already floored.
    #[inline]
    pub fn speed(&self, rho: f64) -> f64 {
        if rho <= self.rho_f {
            self.v_f
        } else if rho >= self.rho_j {
            0.0
        } else {
            self.v_f * (1.0 - (rho - self.rho_f) / (self.rho_j - self.rho_f))
        }
    }

    /// Derivative of [`speed`](Self::speed). At both breakpoints the
    /// congested-side value is returned: the ramp slope at `rho_f`, zero at
    /// `rho_j`.
    #[inline]
    pub fn slope(&self, rho: f64) -> f64 {
        if rho < self.rho_f || rho >= self.rho_j {
            0.0
        } else {
            self.ramp_slope()
        }
    }
}

/// Pressure law `h(rho) = c * sqrt((rho - rho_f) / (rho_j - rho))`, zero in
/// free flow and frozen at `rho_cap = rho_j - 0.5` to stay finite near jam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureLaw {
    /// Speed scale `c` (m/s).
    pub scale: f64,
    /// Density below which pressure vanishes (veh/km).
    pub rho_f: f64,
    /// Pole of the pressure law (veh/km).
    pub rho_j: f64,
}

impl PressureLaw {
    pub fn new(scale: f64, rho_f: f64, rho_j: f64) -> Result<Self, ModelError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "pressure_scale",
                reason: format!("pressure scale must be positive, got {scale}"),
            });
        }
        if !(rho_f.is_finite() && rho_j.is_finite() && rho_f < rho_j - PRESSURE_CAP_OFFSET) {
            return Err(ModelError::InvalidParameter {
                name: "rho_f",
                reason: format!(
                    "pressure bounds need rho_f < rho_j - {PRESSURE_CAP_OFFSET}, got rho_f={rho_f}, rho_j={rho_j}"
                ),
            });
        }
        Ok(Self { scale, rho_f, rho_j })
    }

    /// `h(rho) = 8 sqrt((rho - 10) / (140 - rho))` m/s.
    pub fn standard() -> Self {
        Self { scale: 8.0, rho_f: 10.0, rho_j: 140.0 }
    }

    pub fn rho_cap(&self) -> f64 {
        self.rho_j - PRESSURE_CAP_OFFSET
    }

    /// Pressure without the domain check.
    #[inline]
    pub fn value(&self, rho: f64) -> f64 {
        if rho <= self.rho_f {
            return 0.0;
        }
        let rho = rho.min(self.rho_cap());
        self.scale * ((rho - self.rho_f) / (self.rho_j - rho)).sqrt()
    }

    /// Closed-form derivative on the open interval `(rho_f, rho_cap)`.
    #[inline]
    fn derivative_unchecked(&self, rho: f64) -> f64 {
        let span = self.rho_j - self.rho_f;
        let gap = self.rho_j - rho;
        0.5 * self.scale * span / (gap * gap) * (gap / (rho - self.rho_f)).sqrt()
    }

    /// Derivative used by the solver: zero on the free-flow branch, frozen
    /// at its `rho_cap` value above the cap. It diverges as `rho -> rho_f+`.
    #[inline]
    pub fn slope(&self, rho: f64) -> f64 {
        if rho <= self.rho_f {
            0.0
        } else {
            self.derivative_unchecked(rho.min(self.rho_cap()))
        }
    }
}

/// Everything the relaxation model needs besides the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub fd: FundamentalDiagram,
    pub pl: PressureLaw,
    /// Relaxation time (s).
    pub tau: f64,
    /// Look-ahead distance (m); zero means local relaxation.
    pub lookahead: f64,
}

impl ModelParams {
    pub fn new(fd: FundamentalDiagram, pl: PressureLaw, tau: f64, lookahead: f64) -> Result<Self, ModelError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "tau",
                reason: format!("relaxation time must be positive, got {tau}"),
            });
        }
        if !(lookahead.is_finite() && lookahead >= 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "lookahead",
                reason: format!("look-ahead distance must be non-negative, got {lookahead}"),
            });
        }
        Ok(Self { fd, pl, tau, lookahead })
    }

    pub fn standard(lookahead: f64) -> Self {
        Self { fd: FundamentalDiagram::standard(), pl: PressureLaw::standard(), tau: 3.0, lookahead }
    }

    pub fn with_lookahead(mut self, lookahead: f64) -> Self {
        self.lookahead = lookahead;
        self
    }
}

fn check_density(rho: f64) -> Result<(), ModelError> {
    if rho.is_nan() || rho < 0.0 {
        Err(ModelError::NegativeDensity(rho))
    } else {
        Ok(())
    }
}

/// Equilibrium speed `V(rho)` in m/s.
pub fn equilibrium_speed(fd: &FundamentalDiagram, rho: f64) -> Result<f64, ModelError> {
    check_density(rho)?;
    Ok(fd.speed(rho))
}

/// `V'(rho)`; see [`FundamentalDiagram::slope`] for the breakpoint rule.
pub fn equilibrium_speed_derivative(fd: &FundamentalDiagram, rho: f64) -> Result<f64, ModelError> {
    check_density(rho)?;
    Ok(fd.slope(rho))
}

/// Pressure `h(rho)` in m/s, clamped above `rho_cap`.
pub fn pressure(pl: &PressureLaw, rho: f64) -> Result<f64, ModelError> {
    check_density(rho)?;
    Ok(pl.value(rho))
}

/// Analytic `h'(rho)`, defined only on `(rho_f, rho_cap)`.
pub fn pressure_derivative(pl: &PressureLaw, rho: f64) -> Result<f64, ModelError> {
    check_density(rho)?;
    if rho <= pl.rho_f || rho >= pl.rho_cap() {
        return Err(ModelError::PressureDerivativeDomain { rho, low: pl.rho_f, high: pl.rho_cap() });
    }
    Ok(pl.derivative_unchecked(rho))
}

//! Eigenstructure of the ARZ system in conserved variables `(rho, y)` and
//! the HLL interface flux.
//!
//! The physical flux is `F(U) = (rho * v, y * v)` with `v = y / rho - h`.
//! Its characteristic speeds are `v - rho_p * h'(rho_p)` and `v`, where
//! `rho_p` is the density the pressure is evaluated on (the class's own
//! density for one class, the total density for two classes).

use crate::grid::{recover_velocity, ClampCounter, DENSITY_FLOOR};
use crate::model::PressureLaw;

/// Below this fan width the HLL middle state is treated as degenerate.
pub const MIN_FAN_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservedState {
    /// Density (veh/km).
    pub rho: f64,
    /// Relative flow `rho * (v + h)`.
    pub y: f64,
}

impl ConservedState {
    pub fn new(rho: f64, y: f64) -> Self {
        Self { rho: rho.max(DENSITY_FLOOR), y }
    }

    pub fn from_primitive(rho: f64, v: f64, pl: &PressureLaw) -> Self {
        let rho = rho.max(DENSITY_FLOOR);
        Self { rho, y: crate::grid::to_conserved(rho, v, pl) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InterfaceFlux {
    pub f_rho: f64,
    pub f_y: f64,
}

/// A conserved state together with the quantities the flux needs, evaluated
/// once per cell per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub rho: f64,
    pub y: f64,
    /// Recovered velocity (m/s).
    pub v: f64,
    /// `rho_p * h'(rho_p)` (m/s), the gap between the two characteristic speeds.
    pub pressure_stiffness: f64,
}

impl CellState {
    /// Evaluates a state whose pressure depends on its own density.
    pub fn evaluate(state: ConservedState, pl: &PressureLaw, clamps: &mut ClampCounter) -> Self {
        Self::evaluate_with_pressure(state, state.rho, pl, clamps)
    }

    /// Evaluates a state whose pressure depends on `pressure_density`.
    pub fn evaluate_with_pressure(
        state: ConservedState,
        pressure_density: f64,
        pl: &PressureLaw,
        clamps: &mut ClampCounter,
    ) -> Self {
        let v = recover_velocity(state.rho, state.y, pl.value(pressure_density), clamps);
        Self { rho: state.rho, y: state.y, v, pressure_stiffness: pressure_density * pl.slope(pressure_density) }
    }

    #[inline]
    pub fn speeds(&self) -> (f64, f64) {
        (self.v - self.pressure_stiffness, self.v)
    }

    #[inline]
    pub fn flux(&self) -> InterfaceFlux {
        InterfaceFlux { f_rho: self.rho * self.v, f_y: self.y * self.v }
    }
}

/// `(lambda1, lambda2) = (v - rho h'(rho), v)`.
pub fn characteristic_speeds(state: ConservedState, pl: &PressureLaw) -> (f64, f64) {
    CellState::evaluate(state, pl, &mut ClampCounter::default()).speeds()
}

pub fn physical_flux(state: ConservedState, pl: &PressureLaw) -> InterfaceFlux {
    CellState::evaluate(state, pl, &mut ClampCounter::default()).flux()
}

/// Davis estimates: the slowest and fastest of the two cells' eigenvalues.
pub fn wave_speed_estimates(left: ConservedState, right: ConservedState, pl: &PressureLaw) -> (f64, f64) {
    let mut clamps = ClampCounter::default();
    cell_wave_speeds(&CellState::evaluate(left, pl, &mut clamps), &CellState::evaluate(right, pl, &mut clamps))
}

#[inline]
pub fn cell_wave_speeds(left: &CellState, right: &CellState) -> (f64, f64) {
    let (l1, l2) = left.speeds();
    let (r1, r2) = right.speeds();
    (l1.min(r1), l2.max(r2))
}

pub fn hll_flux(left: ConservedState, right: ConservedState, pl: &PressureLaw) -> InterfaceFlux {
    let mut clamps = ClampCounter::default();
    cell_hll_flux(&CellState::evaluate(left, pl, &mut clamps), &CellState::evaluate(right, pl, &mut clamps))
}

/// HLL flux between two evaluated cells. The middle branch is written as
/// `F_L - S_L (F_R - F_L - S_R (U_R - U_L)) / (S_R - S_L)`, which reduces to
/// `F_L` exactly when the two states coincide.
#[inline]
pub fn cell_hll_flux(left: &CellState, right: &CellState) -> InterfaceFlux {
    let (s_l, s_r) = cell_wave_speeds(left, right);
    let f_l = left.flux();
    if s_l >= 0.0 {
        return f_l;
    }
    let f_r = right.flux();
    if s_r <= 0.0 {
        return f_r;
    }
    let width = s_r - s_l;
    if width < MIN_FAN_WIDTH {
        return f_l;
    }
    let scale = s_l / width;
    InterfaceFlux {
        f_rho: f_l.f_rho - scale * (f_r.f_rho - f_l.f_rho - s_r * (right.rho - left.rho)),
        f_y: f_l.f_y - scale * (f_r.f_y - f_l.f_y - s_r * (right.y - left.y)),
    }
}

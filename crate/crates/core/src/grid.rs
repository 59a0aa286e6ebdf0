//! Periodic 1-D grid and per-class field storage in conserved variables
//! `(rho, y)` with `y = rho * (v + h)`.

use crate::error::GridError;
use crate::model::PressureLaw;

/// Lower bound applied to every density after an update (veh/km).
pub const DENSITY_FLOOR: f64 = 1e-6;

/// Uniform periodic grid; cell `i + n_cells` aliases cell `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingGrid {
    length: f64,
    dx: f64,
    n_cells: usize,
}

impl RingGrid {
    pub fn new(length: f64, dx: f64) -> Result<Self, GridError> {
        if !(length.is_finite() && dx.is_finite() && length > 0.0 && dx > 0.0) {
            return Err(GridError::NonPositive { length, dx });
        }
        let ratio = length / dx;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 {
            return Err(GridError::NonIntegral { length, dx });
        }
        let n_cells = n as usize;
        if n_cells < 4 {
            return Err(GridError::TooFewCells(n_cells));
        }
        Ok(Self { length, dx, n_cells })
    }

    /// 1000 m ring with 5 m cells.
    pub fn standard() -> Self {
        Self { length: 1000.0, dx: 5.0, n_cells: 200 }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    pub fn cell_centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(|i| self.cell_center(i))
    }

    /// Periodic index `(i + offset) mod n`.
    #[inline]
    pub fn wrap(&self, i: usize, offset: usize) -> usize {
        (i + offset) % self.n_cells
    }

    pub fn check_len(&self, len: usize) -> Result<(), GridError> {
        if len != self.n_cells {
            return Err(GridError::SizeMismatch { expected: self.n_cells, got: len });
        }
        Ok(())
    }
}

/// Running count of velocity clamps performed during primitive recovery.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ClampCounter(pub u64);

impl ClampCounter {
    pub fn count(&self) -> u64 {
        self.0
    }
}

/// `y = rho * (v + h(rho))`.
pub fn to_conserved(rho: f64, v: f64, pl: &PressureLaw) -> f64 {
    rho * (v + pl.value(rho))
}

/// Inverse of [`to_conserved`]; negative velocities are clamped to zero and
/// counted.
pub fn to_primitive(rho: f64, y: f64, pl: &PressureLaw, clamps: &mut ClampCounter) -> f64 {
    recover_velocity(rho, y, pl.value(rho), clamps)
}

/// Velocity recovery against an already evaluated pressure `h`.
#[inline]
pub(crate) fn recover_velocity(rho: f64, y: f64, h: f64, clamps: &mut ClampCounter) -> f64 {
    let v = y / rho - h;
    if v < 0.0 {
        clamps.0 += 1;
        0.0
    } else {
        v
    }
}

/// Density and conserved relative flow of one vehicle class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassField {
    pub rho: Vec<f64>,
    pub y: Vec<f64>,
}

impl ClassField {
    /// Builds a field from primitive variables; the pressure is evaluated on
    /// the field's own density.
    pub fn from_primitive(rho: &[f64], v: &[f64], pl: &PressureLaw) -> Self {
        assert_eq!(rho.len(), v.len(), "density and velocity lengths differ");
        let rho: Vec<f64> = rho.iter().map(|r| r.max(DENSITY_FLOOR)).collect();
        let y = rho.iter().zip(v).map(|(&r, &vi)| to_conserved(r, vi, pl)).collect();
        Self { rho, y }
    }

    /// Builds a field whose pressure is evaluated on a separate (total)
    /// density, as in the two-class model.
    pub fn from_primitive_with_pressure(rho: &[f64], v: &[f64], pressure_density: &[f64], pl: &PressureLaw) -> Self {
        assert_eq!(rho.len(), v.len(), "density and velocity lengths differ");
        assert_eq!(rho.len(), pressure_density.len(), "pressure density length differs");
        let rho: Vec<f64> = rho.iter().map(|r| r.max(DENSITY_FLOOR)).collect();
        let y = rho.iter().zip(v).zip(pressure_density).map(|((&r, &vi), &rs)| r * (vi + pl.value(rs))).collect();
        Self { rho, y }
    }

    pub fn uniform(n: usize, rho: f64, v: f64, pl: &PressureLaw) -> Self {
        Self::from_primitive(&vec![rho; n], &vec![v; n], pl)
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn velocities(&self, pl: &PressureLaw, clamps: &mut ClampCounter) -> Vec<f64> {
        self.rho.iter().zip(&self.y).map(|(&r, &y)| to_primitive(r, y, pl, clamps)).collect()
    }

    /// Velocities recovered against the pressure of `pressure_density`.
    pub fn velocities_with_pressure(
        &self,
        pressure_density: &[f64],
        pl: &PressureLaw,
        clamps: &mut ClampCounter,
    ) -> Vec<f64> {
        self.rho
            .iter()
            .zip(&self.y)
            .zip(pressure_density)
            .map(|((&r, &y), &rs)| recover_velocity(r, y, pl.value(rs), clamps))
            .collect()
    }
}

/// HDV and CAV fields on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedField {
    pub hdv: ClassField,
    pub cav: ClassField,
}

impl MixedField {
    pub fn new(hdv: ClassField, cav: ClassField) -> Result<Self, GridError> {
        if hdv.len() != cav.len() {
            return Err(GridError::SizeMismatch { expected: hdv.len(), got: cav.len() });
        }
        Ok(Self { hdv, cav })
    }

    /// `rho_s = rho_h + rho_c` cell-wise.
    pub fn total_density(&self) -> Vec<f64> {
        self.hdv.rho.iter().zip(&self.cav.rho).map(|(a, b)| a + b).collect()
    }

    /// Class velocities `(v_h, v_c)`, recovered with the pressure of the
    /// total density.
    pub fn velocities(&self, pl: &PressureLaw, clamps: &mut ClampCounter) -> (Vec<f64>, Vec<f64>) {
        let total = self.total_density();
        (self.hdv.velocities_with_pressure(&total, pl, clamps), self.cav.velocities_with_pressure(&total, pl, clamps))
    }

    pub fn len(&self) -> usize {
        self.hdv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hdv.is_empty()
    }
}

/// Number of vehicles on the ring: `sum(rho_i) * dx / 1000`.
pub fn total_mass(field: &ClassField, grid: &RingGrid) -> f64 {
    density_mass(&field.rho, grid)
}

pub fn mixed_mass(field: &MixedField, grid: &RingGrid) -> f64 {
    total_mass(&field.hdv, grid) + total_mass(&field.cav, grid)
}

pub(crate) fn density_mass(rho: &[f64], grid: &RingGrid) -> f64 {
    rho.iter().sum::<f64>() * grid.dx() / 1000.0
}

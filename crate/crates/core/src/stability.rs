//! Linear stability of uniform flow under a wave perturbation
//! `rho0 + R exp(ikx + sigma t)`.
//!
//! The perturbation amplitudes satisfy a 2x2 homogeneous system whose
//! determinant is
//!
//! ```text
//! D(sigma) = (sigma + ik psi)(sigma + ik psi + 1/tau) - ik rho0 (sigma phi + ik psi phi - zeta/tau)
//! ```
//!
//! with `psi = V(rho0)`, `phi = h'(rho0)` and
//! `zeta = V'(rho0) (e^{ikL} - 1) / (ikL)` the look-ahead coupling.

use num_complex::Complex64;

use crate::error::StabilityError;
use crate::model::{pressure_derivative, FundamentalDiagram, PressureLaw};

/// Growth rates at or below this count as non-growing.
pub const GROWTH_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationQuery {
    /// Base density (veh/km).
    pub rho0: f64,
    /// Wavenumber (1/m).
    pub k: f64,
    /// Look-ahead distance (m).
    pub lookahead: f64,
    /// Relaxation time (s).
    pub tau: f64,
    pub fd: FundamentalDiagram,
    pub pl: PressureLaw,
}

impl PerturbationQuery {
    pub fn new(
        rho0: f64,
        k: f64,
        lookahead: f64,
        tau: f64,
        fd: FundamentalDiagram,
        pl: PressureLaw,
    ) -> Result<Self, StabilityError> {
        if !(rho0 > fd.rho_f && rho0 < fd.rho_j) {
            return Err(StabilityError::InvalidQuery(format!(
                "base density {rho0} outside ({}, {})",
                fd.rho_f, fd.rho_j
            )));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(StabilityError::InvalidQuery(format!("wavenumber must be positive, got {k}")));
        }
        if !(lookahead.is_finite() && lookahead >= 0.0) {
            return Err(StabilityError::InvalidQuery(format!("look-ahead must be non-negative, got {lookahead}")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(StabilityError::InvalidQuery(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { rho0, k, lookahead, tau, fd, pl })
    }

    /// Reference laws with `tau = 3 s`.
    pub fn standard(rho0: f64, k: f64, lookahead: f64) -> Result<Self, StabilityError> {
        Self::new(rho0, k, lookahead, 3.0, FundamentalDiagram::standard(), PressureLaw::standard())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionResult {
    /// `V(rho0)` (m/s).
    pub psi: f64,
    /// `h'(rho0)`.
    pub phi: f64,
    pub zeta: Complex64,
    /// Both growth exponents (1/s).
    pub roots: [Complex64; 2],
    /// Largest real part of the roots (1/s).
    pub max_growth: f64,
}

/// `(e^{ix} - 1) / (ix)`, written as `e^{ix/2} sin(x/2) / (x/2)` to avoid
/// cancellation for small `x`; equals 1 at `x = 0`.
fn lookahead_kernel(x: f64) -> Complex64 {
    if x == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let half = 0.5 * x;
    Complex64::from_polar(half.sin() / half, half)
}

/// Look-ahead coupling coefficient `zeta`. At zero look-ahead this is the
/// analytic limit `V'(rho0)`.
pub fn zeta(query: &PerturbationQuery) -> Complex64 {
    lookahead_kernel(query.k * query.lookahead) * query.fd.slope(query.rho0)
}

/// Evaluates the dispersion determinant at `sigma`.
pub fn determinant(query: &PerturbationQuery, sigma: Complex64) -> Result<Complex64, StabilityError> {
    let i = Complex64::i();
    let psi = query.fd.speed(query.rho0);
    let phi = pressure_derivative(&query.pl, query.rho0)?;
    let z = zeta(query);
    let ik = i * query.k;
    let s = sigma + ik * psi;
    Ok(s * (s + 1.0 / query.tau) - ik * query.rho0 * (sigma * phi + ik * psi * phi - z / query.tau))
}

/// Roots of `s^2 + b s + c = 0`, the larger-magnitude one first.
fn quadratic_roots(b: Complex64, c: Complex64) -> [Complex64; 2] {
    let disc = (b * b - 4.0 * c).sqrt();
    // pick the branch that adds rather than cancels
    let signed = if (b.conj() * disc).re >= 0.0 { b + disc } else { b - disc };
    let q = -0.5 * signed;
    if q == Complex64::new(0.0, 0.0) {
        return [q, q];
    }
    [q, c / q]
}

/// Both complex growth exponents of the perturbation.
pub fn dispersion_roots(query: &PerturbationQuery) -> Result<DispersionResult, StabilityError> {
    let i = Complex64::i();
    let psi = query.fd.speed(query.rho0);
    let phi = pressure_derivative(&query.pl, query.rho0)?;
    let z = zeta(query);
    let shift = i * query.k * psi;
    // in s = sigma + ik psi the determinant is s^2 + (1/tau - ik rho0 phi) s + ik rho0 zeta / tau
    let b = Complex64::new(1.0 / query.tau, 0.0) - i * query.k * query.rho0 * phi;
    let c = i * query.k * query.rho0 * z / query.tau;
    let roots = quadratic_roots(b, c).map(|s| s - shift);
    let max_growth = roots[0].re.max(roots[1].re);
    Ok(DispersionResult { psi, phi, zeta: z, roots, max_growth })
}

/// `h'(rho0) + |sin(kL)| / (kL) * V'(rho0)`; positive means stable. The
/// sinc factor is 1 at zero look-ahead.
pub fn stability_criterion_margin(
    rho0: f64,
    k: f64,
    lookahead: f64,
    fd: &FundamentalDiagram,
    pl: &PressureLaw,
) -> Result<f64, StabilityError> {
    let x = k * lookahead;
    let factor = if x == 0.0 { 1.0 } else { x.sin().abs() / x };
    Ok(pressure_derivative(pl, rho0)? + factor * fd.slope(rho0))
}

/// Inclusive, evenly spaced sample of an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linspace {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl Linspace {
    pub fn new(start: f64, end: f64, count: usize) -> Self {
        Self { start, end, count }
    }

    pub fn single(value: f64) -> Self {
        Self { start: value, end: value, count: 1 }
    }

    pub fn points(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n).map(|j| self.start + (self.end - self.start) * j as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityPoint {
    pub rho0: f64,
    pub k: f64,
    pub lookahead: f64,
    pub margin: f64,
    pub max_growth: f64,
}

impl StabilityPoint {
    /// Whether the closed-form criterion and the dispersion roots agree on
    /// stability.
    pub fn agrees(&self) -> bool {
        (self.margin > 0.0) == (self.max_growth <= GROWTH_TOLERANCE)
    }
}

/// Evaluates criterion and dispersion roots over a grid, density outermost
/// and look-ahead innermost.
pub fn stability_map(
    rho_range: &Linspace,
    k_range: &Linspace,
    lookahead_range: &Linspace,
    tau: f64,
    fd: &FundamentalDiagram,
    pl: &PressureLaw,
) -> Result<Vec<StabilityPoint>, StabilityError> {
    let (rhos, ks, lds) = (rho_range.points(), k_range.points(), lookahead_range.points());
    if rhos.is_empty() || ks.is_empty() || lds.is_empty() {
        return Err(StabilityError::InvalidQuery("empty parameter range".into()));
    }
    let mut out = Vec::with_capacity(rhos.len() * ks.len() * lds.len());
    for &rho0 in &rhos {
        for &k in &ks {
            for &lookahead in &lds {
                let at =
                    |source: StabilityError| StabilityError::AtPoint { rho0, k, lookahead, source: Box::new(source) };
                let query = PerturbationQuery::new(rho0, k, lookahead, tau, *fd, *pl).map_err(at)?;
                let margin = stability_criterion_margin(rho0, k, lookahead, fd, pl).map_err(at)?;
                let roots = dispersion_roots(&query).map_err(at)?;
                out.push(StabilityPoint { rho0, k, lookahead, margin, max_growth: roots.max_growth });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const K1: f64 = 2.0 * PI / 1000.0;

    /// Plain quadratic formula on the expanded determinant coefficients.
    fn oracle_roots(q: &PerturbationQuery) -> [Complex64; 2] {
        let i = Complex64::i();
        let psi = q.fd.speed(q.rho0);
        let phi = pressure_derivative(&q.pl, q.rho0).unwrap();
        let z = if q.lookahead == 0.0 {
            Complex64::new(q.fd.slope(q.rho0), 0.0)
        } else {
            let x = q.k * q.lookahead;
            ((i * x).exp() - 1.0) * q.fd.slope(q.rho0) / (i * x)
        };
        let ikpsi = i * q.k * psi;
        let b = 2.0 * ikpsi + 1.0 / q.tau - i * q.k * q.rho0 * phi;
        let c = ikpsi * (ikpsi + 1.0 / q.tau) - i * q.k * q.rho0 * (ikpsi * phi - z / q.tau);
        let d = (b * b - 4.0 * c).sqrt();
        [(-b + d) / 2.0, (-b - d) / 2.0]
    }

    fn max_re(r: [Complex64; 2]) -> f64 {
        r[0].re.max(r[1].re)
    }

    #[test]
    fn zeta_examples() {
        let v1 = -20.0 / 130.0;
        let q = PerturbationQuery::standard(56.0, K1, 0.0).unwrap();
        assert_eq!(zeta(&q), Complex64::new(v1, 0.0));
        let q = PerturbationQuery::standard(56.0, K1, 1000.0).unwrap();
        assert!(zeta(&q).norm() < 1e-15);
        let q = PerturbationQuery::standard(56.0, K1, 100.0).unwrap();
        let x: f64 = K1 * 100.0;
        let direct = ((Complex64::i() * x).exp() - 1.0) * v1 / (Complex64::i() * x);
        assert!((zeta(&q) - direct).norm() < 1e-14);
        assert!((zeta(&q).norm() / v1.abs() - 0.98363).abs() < 1e-5);
    }

    #[test]
    fn long_wave_limit() {
        let q = PerturbationQuery::standard(56.0, 1e-9, 100.0).unwrap();
        let r = dispersion_roots(&q).unwrap();
        let mut re = [r.roots[0].re, r.roots[1].re];
        re.sort_by(f64::total_cmp);
        assert!((re[0] + 1.0 / 3.0).abs() < 1e-6);
        assert!(re[1].abs() < 1e-6);
    }

    #[test]
    fn baseline_is_linearly_unstable() {
        let q = PerturbationQuery::standard(56.0, K1, 0.0).unwrap();
        let r = dispersion_roots(&q).unwrap();
        assert!(r.max_growth > 0.0);
        assert_relative_eq!(r.max_growth, max_re(oracle_roots(&q)), max_relative = 1e-9);
        assert!((r.max_growth - 0.00293645).abs() < 1e-7);
    }

    #[test]
    fn vanishing_coupling_is_neutral() {
        for n in 1..4 {
            let q = PerturbationQuery::standard(56.0, K1, 1000.0 * n as f64).unwrap();
            let r = dispersion_roots(&q).unwrap();
            assert!(stability_criterion_margin(56.0, K1, 1000.0 * n as f64, &q.fd, &q.pl).unwrap() >= 0.0);
            assert!(r.max_growth <= GROWTH_TOLERANCE, "growth {}", r.max_growth);
        }
    }

    #[test]
    fn margin_examples() {
        let (fd, pl) = (FundamentalDiagram::standard(), PressureLaw::standard());
        let m = stability_criterion_margin(56.0, K1, 0.0, &fd, &pl).unwrap();
        assert!((m - (-0.0542)).abs() < 1e-4);
        assert!(m < 0.0);
        // kL = pi kills the sine
        let m = stability_criterion_margin(56.0, K1, 500.0, &fd, &pl).unwrap();
        assert_relative_eq!(m, pressure_derivative(&pl, 56.0).unwrap(), epsilon = 1e-15);
        let m = stability_criterion_margin(120.0, K1, 0.0, &fd, &pl).unwrap();
        let expect = 4.0 * 130.0 / 400.0 * (20.0f64 / 110.0).sqrt() - 20.0 / 130.0;
        assert_relative_eq!(m, expect, epsilon = 1e-14);
        assert!(m > 0.0);
        assert!(stability_criterion_margin(5.0, K1, 0.0, &fd, &pl).is_err());
    }

    #[test]
    fn query_validation() {
        assert!(PerturbationQuery::standard(5.0, K1, 0.0).is_err());
        assert!(PerturbationQuery::standard(56.0, 0.0, 0.0).is_err());
        assert!(PerturbationQuery::standard(56.0, K1, -1.0).is_err());
        assert!(PerturbationQuery::new(56.0, K1, 0.0, 0.0, FundamentalDiagram::standard(), PressureLaw::standard())
            .is_err());
    }

    #[test]
    fn map_degenerate_grid_matches_scalars() {
        let (fd, pl) = (FundamentalDiagram::standard(), PressureLaw::standard());
        let map =
            stability_map(&Linspace::single(56.0), &Linspace::single(K1), &Linspace::single(100.0), 3.0, &fd, &pl)
                .unwrap();
        assert_eq!(map.len(), 1);
        let q = PerturbationQuery::standard(56.0, K1, 100.0).unwrap();
        assert_eq!(map[0].margin, stability_criterion_margin(56.0, K1, 100.0, &fd, &pl).unwrap());
        assert_eq!(map[0].max_growth, dispersion_roots(&q).unwrap().max_growth);
    }

    #[test]
    fn map_ordering_and_errors() {
        let (fd, pl) = (FundamentalDiagram::standard(), PressureLaw::standard());
        let map = stability_map(
            &Linspace::new(40.0, 60.0, 2),
            &Linspace::new(K1, 2.0 * K1, 3),
            &Linspace::new(0.0, 100.0, 4),
            3.0,
            &fd,
            &pl,
        )
        .unwrap();
        assert_eq!(map.len(), 24);
        assert_eq!((map[0].rho0, map[0].lookahead), (40.0, 0.0));
        assert_eq!(map[1].lookahead, 100.0 / 3.0);
        assert_eq!(map[12].rho0, 60.0);
        let err =
            stability_map(&Linspace::new(5.0, 60.0, 2), &Linspace::single(K1), &Linspace::single(0.0), 3.0, &fd, &pl)
                .unwrap_err();
        assert!(matches!(err, StabilityError::AtPoint { rho0, .. } if rho0 == 5.0));
        assert!(stability_map(
            &Linspace::new(1.0, 2.0, 0),
            &Linspace::single(K1),
            &Linspace::single(0.0),
            3.0,
            &fd,
            &pl
        )
        .is_err());
    }

    #[test]
    fn sinc_factor_non_increasing_in_lookahead() {
        let (fd, pl) = (FundamentalDiagram::standard(), PressureLaw::standard());
        let lds = Linspace::new(1.0, 500.0, 200).points();
        let margins: Vec<f64> =
            lds.iter().map(|&l| stability_criterion_margin(56.0, K1, l, &fd, &pl).unwrap()).collect();
        for w in margins.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
        }
    }

    fn query() -> impl Strategy<Value = PerturbationQuery> {
        (12.0f64..138.0, 1e-4f64..0.1, 0.0f64..2000.0, 0.5f64..10.0).prop_map(|(r, k, l, t)| {
            PerturbationQuery::new(r, k, l, t, FundamentalDiagram::standard(), PressureLaw::standard()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn roots_solve_the_determinant(q in query()) {
            let r = dispersion_roots(&q).unwrap();
            for s in r.roots {
                let d = determinant(&q, s).unwrap();
                prop_assert!(d.norm() < 1e-10 * (1.0 + s.norm_sqr()));
            }
            let o = oracle_roots(&q);
            prop_assert!((r.max_growth - max_re(o)).abs() < 1e-9 * (1.0 + r.max_growth.abs()));
        }

        #[test]
        fn zeta_bounded_by_speed_slope(q in query()) {
            prop_assert!(zeta(&q).norm() <= q.fd.slope(q.rho0).abs() * (1.0 + 1e-15));
        }

        #[test]
        fn zero_lookahead_is_subcharacteristic(r in 11.0f64..139.0, k in 1e-4f64..0.1) {
            let (fd, pl) = (FundamentalDiagram::standard(), PressureLaw::standard());
            let m = stability_criterion_margin(r, k, 0.0, &fd, &pl).unwrap();
            prop_assert_eq!(m, pressure_derivative(&pl, r).unwrap() + fd.slope(r));
        }
    }
}

//! Downstream look-ahead averages of a periodic density field.
//!
//! The window for cell `i` is the `m` cells strictly ahead of it,
//! `i+1 ..= i+m` (wrapping), where `m = round(L_D / dx)`.

use crate::error::GridError;
use crate::grid::RingGrid;

/// Observation window of a look-ahead average.
#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadSpec {
    distance: f64,
    m_cells: usize,
    weights: Option<Vec<f64>>,
}

impl LookaheadSpec {
    /// Uniform window covering `distance` metres. A positive distance shorter
    /// than half a cell still observes the next cell.
    pub fn new(distance: f64, grid: &RingGrid) -> Result<Self, GridError> {
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(GridError::InvalidWeights(format!("look-ahead distance must be non-negative, got {distance}")));
        }
        let m_cells = if distance == 0.0 { 0 } else { ((distance / grid.dx()).round() as usize).max(1) };
        if m_cells > grid.n_cells() {
            return Err(GridError::WindowTooLarge { window: m_cells, n_cells: grid.n_cells() });
        }
        Ok(Self { distance, m_cells, weights: None })
    }

    /// Attaches per-offset weights; `weights[j]` applies to cell `i + 1 + j`.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, GridError> {
        if weights.len() != self.m_cells {
            return Err(GridError::InvalidWeights(format!("expected {} weights, got {}", self.m_cells, weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(GridError::InvalidWeights(format!("negative or non-finite weight {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(GridError::InvalidWeights(format!("weights sum to {sum}, expected 1")));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn m_cells(&self) -> usize {
        self.m_cells
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_local(&self) -> bool {
        self.m_cells == 0
    }
}

/// Compensated (Neumaier) accumulator for the sliding window sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Uniform look-ahead average `rho*_i = (1/m) sum_{j=1..m} rho_{i+j}` in
/// O(n) via a sliding window. With `m = 0` the field is returned unchanged.
pub fn lookahead_average(rho: &[f64], grid: &RingGrid, spec: &LookaheadSpec) -> Result<Vec<f64>, GridError> {
    grid.check_len(rho.len())?;
    let n = grid.n_cells();
    let m = spec.m_cells;
    if m > n {
        return Err(GridError::WindowTooLarge { window: m, n_cells: n });
    }
    if m == 0 {
        return Ok(rho.to_vec());
    }
    let inv_m = 1.0 / m as f64;
    let mut window = CompensatedSum::default();
    for j in 1..=m {
        window.add(rho[j % n]);
    }
    let mut out = Vec::with_capacity(n);
    out.push(window.value() * inv_m);
    for i in 1..n {
        window.add(rho[(i + m) % n]);
        window.add(-rho[i]);
        out.push(window.value() * inv_m);
    }
    Ok(out)
}

/// Weighted look-ahead average `rho*_i = sum_j w_j rho_{i+1+j}`. Uniform
/// weights are routed to [`lookahead_average`] so both agree bit-for-bit.
pub fn weighted_lookahead_average(rho: &[f64], grid: &RingGrid, spec: &LookaheadSpec) -> Result<Vec<f64>, GridError> {
    grid.check_len(rho.len())?;
    let weights = spec.weights.as_deref().ok_or_else(|| GridError::InvalidWeights("no weights attached".into()))?;
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
        return Err(GridError::InvalidWeights(format!("weights sum to {sum}, expected 1")));
    }
    let n = grid.n_cells();
    if weights.len() > n {
        return Err(GridError::WindowTooLarge { window: weights.len(), n_cells: n });
    }
    if weights.windows(2).all(|w| w[0] == w[1]) {
        return lookahead_average(rho, grid, spec);
    }
    Ok((0..n).map(|i| weights.iter().enumerate().map(|(j, w)| w * rho[(i + 1 + j) % n]).sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ring(n: usize) -> RingGrid {
        RingGrid::new(n as f64 * 5.0, 5.0).unwrap()
    }

    /// Direct summation over the wrapped window.
    fn direct(rho: &[f64], m: usize) -> Vec<f64> {
        let n = rho.len();
        (0..n).map(|i| (1..=m).map(|j| rho[(i + j) % n]).sum::<f64>() / m as f64).collect()
    }

    #[test]
    fn window_sizes() {
        let g = RingGrid::standard();
        assert_eq!(LookaheadSpec::new(0.0, &g).unwrap().m_cells(), 0);
        assert_eq!(LookaheadSpec::new(15.0, &g).unwrap().m_cells(), 3);
        assert_eq!(LookaheadSpec::new(100.0, &g).unwrap().m_cells(), 20);
        assert_eq!(LookaheadSpec::new(1000.0, &g).unwrap().m_cells(), 200);
        assert_eq!(LookaheadSpec::new(1.0, &g).unwrap().m_cells(), 1);
        assert!(matches!(LookaheadSpec::new(1005.0, &g), Err(GridError::WindowTooLarge { window: 201, .. })));
        assert!(LookaheadSpec::new(-1.0, &g).is_err());
    }

    #[test]
    fn four_cell_examples() {
        let g = ring(4);
        let rho = [40.0, 50.0, 60.0, 70.0];
        let spec = LookaheadSpec::new(10.0, &g).unwrap();
        assert_eq!(spec.m_cells(), 2);
        let avg = lookahead_average(&rho, &g, &spec).unwrap();
        assert_eq!(avg[0], 55.0);
        assert_eq!(avg[3], 45.0);

        let w = spec.clone().with_weights(vec![0.75, 0.25]).unwrap();
        let wavg = weighted_lookahead_average(&rho, &g, &w).unwrap();
        assert_eq!(wavg[0], 52.5);
        assert_eq!(wavg[3], 0.75 * 40.0 + 0.25 * 50.0);
    }

    #[test]
    fn local_limit_and_constants() {
        let g = ring(10);
        let rho: Vec<f64> = (0..10).map(|i| 40.0 + i as f64).collect();
        let spec = LookaheadSpec::new(0.0, &g).unwrap();
        assert_eq!(lookahead_average(&rho, &g, &spec).unwrap(), rho);

        let flat = vec![56.0; 10];
        for d in [5.0, 15.0, 50.0] {
            let spec = LookaheadSpec::new(d, &g).unwrap();
            for v in lookahead_average(&flat, &g, &spec).unwrap() {
                assert!((v - 56.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_ring_window_gives_global_mean() {
        let g = RingGrid::standard();
        let rho: Vec<f64> =
            g.cell_centers().map(|x| 56.0 + 14.0 * (2.0 * std::f64::consts::PI * x / 1000.0).sin()).collect();
        let spec = LookaheadSpec::new(1000.0, &g).unwrap();
        for v in lookahead_average(&rho, &g, &spec).unwrap() {
            assert!((v - 56.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_weight_observes_next_cell() {
        let g = ring(6);
        let rho = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let spec = LookaheadSpec::new(15.0, &g).unwrap().with_weights(vec![1.0, 0.0, 0.0]).unwrap();
        let out = weighted_lookahead_average(&rho, &g, &spec).unwrap();
        assert_eq!(out, vec![2.0, 3.0, 4.0, 5.0, 6.0, 1.0]);
    }

    #[test]
    fn weight_validation() {
        let g = ring(8);
        let spec = LookaheadSpec::new(10.0, &g).unwrap();
        assert!(spec.clone().with_weights(vec![0.5, 0.6]).is_err());
        assert!(spec.clone().with_weights(vec![1.5, -0.5]).is_err());
        assert!(spec.clone().with_weights(vec![1.0]).is_err());
        assert!(weighted_lookahead_average(&[0.0; 8], &g, &spec).is_err());
        assert!(lookahead_average(&[0.0; 7], &g, &spec).is_err());
    }

    proptest! {
        #[test]
        fn sliding_window_matches_direct_sum(
            rho in prop::collection::vec(0.0f64..140.0, 4..120),
            frac in 0.0f64..1.0,
        ) {
            let n = rho.len();
            let g = ring(n);
            let m = ((frac * n as f64) as usize).clamp(1, n);
            let spec = LookaheadSpec::new(m as f64 * 5.0, &g).unwrap();
            let fast = lookahead_average(&rho, &g, &spec).unwrap();
            for (a, b) in fast.iter().zip(direct(&rho, m)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn uniform_weights_are_bitwise_equal(
            rho in prop::collection::vec(0.0f64..140.0, 8..40),
            m in 1usize..8,
        ) {
            let g = ring(rho.len());
            let spec = LookaheadSpec::new(m as f64 * 5.0, &g).unwrap();
            let weighted = spec.clone().with_weights(vec![1.0 / m as f64; m]).unwrap();
            prop_assert_eq!(
                weighted_lookahead_average(&rho, &g, &weighted).unwrap(),
                lookahead_average(&rho, &g, &spec).unwrap()
            );
        }

        #[test]
        fn mean_preserved(rho in prop::collection::vec(0.0f64..140.0, 4..100), frac in 0.0f64..1.0) {
            let n = rho.len();
            let g = ring(n);
            let m = ((frac * n as f64) as usize).clamp(0, n);
            let spec = LookaheadSpec::new(m as f64 * 5.0, &g).unwrap();
            let out = lookahead_average(&rho, &g, &spec).unwrap();
            let mean_in = rho.iter().sum::<f64>() / n as f64;
            let mean_out = out.iter().sum::<f64>() / n as f64;
            prop_assert!((mean_in - mean_out).abs() < 1e-12 * (1.0 + mean_in));
        }

        #[test]
        fn shift_equivariant(
            rho in prop::collection::vec(0.0f64..140.0, 4..60),
            m in 1usize..4,
            shift in 0usize..60,
        ) {
            let n = rho.len();
            let g = ring(n);
            let spec = LookaheadSpec::new(m as f64 * 5.0, &g).unwrap();
            let s = shift % n;
            let mut shifted = rho.clone();
            shifted.rotate_left(s);
            let mut a = lookahead_average(&rho, &g, &spec).unwrap();
            a.rotate_left(s);
            let b = lookahead_average(&shifted, &g, &spec).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone(
            rho in prop::collection::vec(0.0f64..140.0, 4..60),
            bump in prop::collection::vec(0.0f64..10.0, 60),
            m in 0usize..4,
        ) {
            let n = rho.len();
            let g = ring(n);
            let spec = LookaheadSpec::new(m as f64 * 5.0, &g).unwrap();
            let upper: Vec<f64> = rho.iter().zip(&bump).map(|(r, b)| r + b).collect();
            let lo = lookahead_average(&rho, &g, &spec).unwrap();
            let hi = lookahead_average(&upper, &g, &spec).unwrap();
            for (a, b) in lo.iter().zip(&hi) {
                prop_assert!(*a <= *b + 1e-12);
            }
        }
    }
}

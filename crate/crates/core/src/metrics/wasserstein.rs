//! Exact 1-Wasserstein distance between empirical measures on the real line.
//!
//! In one dimension the optimal coupling is the monotone one, so
//! W1(P, Q) = ∫₀¹ |F_P⁻¹(u) − F_Q⁻¹(u)| du. Both quantile functions are step
//! functions with jumps at multiples of 1/n and 1/m; between consecutive
//! merged breakpoints the integrand is constant. Breakpoints are tracked as
//! integers on the common grid 1/(n·m) so no rounding enters the interval
//! bookkeeping.

use crate::domain::EmpiricalDistribution;

pub fn wasserstein1(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    if p.len() == q.len() {
        equal_size(p.samples(), q.samples())
    } else {
        quantile_integral(p.samples(), q.samples())
    }
}

/// Mean absolute difference of order statistics; valid only for equal sizes.
pub(crate) fn equal_size(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let total: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    total / x.len() as f64
}

/// Piecewise integration over the merged quantile breakpoints; any sizes.
pub(crate) fn quantile_integral(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as u128;
    let m = y.len() as u128;
    let grid = n * m;
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos: u128 = 0;
    let mut acc = 0.0;
    while pos < grid {
        // Next jump of each quantile function, measured in units of 1/(n·m).
        let next_x = (i as u128 + 1) * m;
        let next_y = (j as u128 + 1) * n;
        let next = next_x.min(next_y);
        acc += (x[i] - y[j]).abs() * (next - pos) as f64;
        pos = next;
        if next == next_x {
            i += 1;
        }
        if next == next_y {
            j += 1;
        }
    }
    acc / grid as f64
}

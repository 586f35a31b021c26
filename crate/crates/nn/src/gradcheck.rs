//! Central finite-difference gradient checking. Used throughout the test
//! suites as the independent oracle for every hand-written backward rule.

/// Central finite differences of a scalar function at `x`.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + step;
        let fp = f(&xs);
        xs[i] = orig - step;
        let fm = f(&xs);
        xs[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Worst relative error between two gradient vectors. The denominator floors
/// at 1e-6 so matching near-zero entries do not divide by zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Deterministic quasi-random values in [-1, 1] for test inputs; avoids
/// pulling an RNG into every gradient test.
pub fn test_values(n: usize, salt: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let h = (i as u64)
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(salt.wrapping_mul(0xd1342543de82ef95));
            let h = (h ^ (h >> 31)).wrapping_mul(0xbf58476d1ce4e5b9);
            let u = ((h >> 11) as f64) / ((1u64 << 53) as f64);
            2.0 * u - 1.0
        })
        .collect()
}

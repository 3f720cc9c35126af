//! Finite-difference utilities for verifying analytic gradients.
//!
//! These are part of the public API so downstream test suites can check
//! their own composite expressions against an oracle that never touches the
//! reverse sweep: the closures rebuild values from plain inputs, so the two
//! sides of every comparison are computed by independent code paths.

/// Central-difference gradient of a scalar function at `x`.
pub fn central_diff<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Central-difference directional derivative (Jacobian-vector product) of a
/// vector function along `v`.
pub fn jvp_central_diff<F>(mut f: F, x: &[f64], v: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    assert_eq!(x.len(), v.len());
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let fp = f(&xp);
    let fm = f(&xm);
    fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect()
}

/// Normalized infinity-norm discrepancy between two gradients:
/// `max|a - b| / max(1e-8, max|a|, max|b|)`. Zero-against-zero compares as 0.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ: {} vs {}", a.len(), b.len());
    let amax = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = amax.max(bmax).max(1e-8);
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

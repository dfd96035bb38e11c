//! Finite-difference gradient checking.

/// Central finite differences of a scalar function at `x`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Relative error `|a - b| / max(1, |a|, |b|)`; the denominator floor keeps
/// tiny gradients from producing spurious blowups.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Worst-case [`rel_err`] across two gradient vectors.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

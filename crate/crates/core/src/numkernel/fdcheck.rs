//! Finite-difference oracles for gradient verification.
//!
//! Test support: these never touch the tape, so they stay independent of the
//! reverse-mode path they are used to check.

/// Central-difference gradient of `f` at `x`, coordinate by coordinate.
pub fn central_diff_grad<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        g[i] = (plus - minus) / (2.0 * h);
    }
    g
}

/// Central-difference directional derivative of `f` at `x` along `dir`.
pub fn central_diff_directional<F: FnMut(&[f64]) -> f64>(
    x: &[f64],
    dir: &[f64],
    h: f64,
    mut f: F,
) -> f64 {
    let plus: Vec<f64> = x.iter().zip(dir).map(|(v, d)| v + h * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(v, d)| v - h * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Max relative error between two gradient vectors.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

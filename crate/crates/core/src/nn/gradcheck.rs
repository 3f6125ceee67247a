//! Central finite differences for checking analytic gradients.

/// Step used for central differences.
pub const STEP: f64 = 1e-4;

/// Numeric gradient of `f` at `x` by central differences.
pub fn numeric_grad<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)` over whole gradient vectors (L2 norms).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[track_caller]
pub fn assert_close_grad(analytic: &[f64], numeric: &[f64], tol: f64) {
    let err = relative_error(analytic, numeric);
    assert!(err < tol, "relative gradient error {err:e} exceeds {tol:e}");
}

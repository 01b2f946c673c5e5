//! Central finite-difference gradient checking.
//!
//! The checker treats the loss as a black box `f: R^n -> R`, so it validates
//! the analytic backward pass against an oracle that knows nothing about the
//! tape. Used by the test suites for every differentiable operation and for
//! the end-to-end model gradient check.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst-case relative error between analytic and numeric gradients.
///
/// Each element is compared as `|a - n| / max(|a|, |n|, FLOOR)`; the floor
/// keeps near-zero gradients from amplifying finite-difference noise into
/// spurious failures while still catching genuinely wrong values.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-2;
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

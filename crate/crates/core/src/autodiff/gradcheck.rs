//! Central finite-difference oracle for gradient verification.
//!
//! Deliberately independent of the tape: it only re-evaluates a closure at
//! perturbed inputs, so it can falsify any backward rule.

/// Gradient of `f` at `x0` by central differences with step `h`.
pub fn finite_diff_gradient<F>(mut f: F, x0: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut grad = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Worst relative disagreement between an analytic and a numeric gradient.
/// Pairs whose absolute difference is below `abs_floor` count as exact:
/// central differences cannot resolve anything below truncation noise.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        if diff <= abs_floor {
            continue;
        }
        let scale = a.abs().max(n.abs());
        worst = worst.max(diff / scale);
    }
    worst
}

//! Central finite differences for gradient verification.

/// Gradient of `f` at `point` by central differences with step `h`.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let fp = f(&probe);
        probe[i] = point[i] - h;
        let fm = f(&probe);
        probe[i] = point[i];
        grads.push((fp - fm) / (2.0 * h));
    }
    grads
}

/// Relative error |a-b| / max(|a|, |b|, floor).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

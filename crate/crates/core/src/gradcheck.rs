//! Central finite differences for checking tape gradients.
//!
//! Only forward evaluations are used here, so the numbers are independent
//! of the reverse pass they are compared against.

/// Default step.
pub const STEP: f64 = 1e-4;

/// ∂f/∂x_i for every coordinate of `point`, by (f(x+h) − f(x−h)) / 2h.
pub fn central_diff<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let up = f(&x);
            x[i] = point[i] - h;
            let down = f(&x);
            x[i] = point[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Same as [`central_diff`] but only at the listed coordinates.
pub fn central_diff_at<F>(mut f: F, point: &[f64], coords: &[usize], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    coords
        .iter()
        .map(|&i| {
            x[i] = point[i] + h;
            let up = f(&x);
            x[i] = point[i] - h;
            let down = f(&x);
            x[i] = point[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// |a − b| / max(|a|, |b|, floor). The floor keeps near-zero gradients
/// from turning rounding noise into huge relative errors.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error over paired gradient entries.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n, floor))
        .fold(0.0, f64::max)
}

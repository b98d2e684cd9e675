//! Central finite-difference oracle. Uses forward evaluations only, so it is
//! independent of every backward implementation it is compared against.

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖, tiny)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

/// Central differences of `f` around `x` at the given coordinates.
pub fn central_diff(x: &[f64], coords: &[usize], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Evenly spread coordinate sample of at most `max` indices out of `len`.
pub fn sample_coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let step = len as f64 / max as f64;
    (0..max).map(|i| ((i as f64 + 0.5) * step) as usize).collect()
}

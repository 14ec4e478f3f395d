//! Small regression helpers: ordinary least squares on raw and log-log
//! scales, tail exponents, and plateau detection.

use crate::num::Real;

/// Ordinary least squares y = slope * x + intercept.
/// Returns `None` for fewer than two distinct abscissae.
pub fn ols<T: Real>(xs: &[T], ys: &[T]) -> Option<(T, T)> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let nt = T::of(n as f64);
    let mut sx = T::zero();
    let mut sy = T::zero();
    for i in 0..n {
        sx += xs[i];
        sy += ys[i];
    }
    let mx = sx / nt;
    let my = sy / nt;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for i in 0..n {
        let dx = xs[i] - mx;
        sxx += dx * dx;
        sxy += dx * (ys[i] - my);
    }
    if sxx <= T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// OLS on (ln x, ln y); pairs with a nonpositive coordinate are dropped.
pub fn ols_loglog<T: Real>(xs: &[T], ys: &[T]) -> Option<(T, T)> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (x, y) in xs.iter().zip(ys) {
        if *x > T::zero() && *y > T::zero() {
            lx.push(x.ln());
            ly.push(y.ln());
        }
    }
    ols(&lx, &ly)
}

/// Log-log slope over the tail x >= x_max / 10^decades.
pub fn tail_exponent<T: Real>(xs: &[T], ys: &[T], decades: T) -> Option<T> {
    let x_max = xs.iter().cloned().fold(T::zero(), |a, b| a.max(b));
    if x_max <= T::zero() {
        return None;
    }
    let cutoff = x_max / T::of(10.0).powf(decades);
    let mut tx = Vec::new();
    let mut ty = Vec::new();
    for (x, y) in xs.iter().zip(ys) {
        if *x >= cutoff {
            tx.push(*x);
            ty.push(*y);
        }
    }
    ols_loglog(&tx, &ty).map(|(s, _)| s)
}

/// True when max/min - 1 over the values stays within `rel_tol`.
/// Empty input is not a plateau.
pub fn is_plateau<T: Real>(values: &[T], rel_tol: T) -> bool {
    if values.is_empty() {
        return false;
    }
    let mut lo = values[0];
    let mut hi = values[0];
    for v in values {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo <= T::zero() {
        return hi <= T::zero();
    }
    hi / lo - T::one() <= rel_tol
}

/// Slope of the upper-envelope fit: OLS restricted to the upper half of the
/// log-x range. Inputs are already logarithmic.
pub fn upper_half_slope<T: Real>(log_x: &[T], log_y: &[T]) -> Option<T> {
    let n = log_x.len().min(log_y.len());
    if n < 2 {
        return None;
    }
    let lo = log_x.iter().cloned().fold(T::infinity(), |a, b| a.min(b));
    let hi = log_x.iter().cloned().fold(T::neg_infinity(), |a, b| a.max(b));
    if !(hi > lo) {
        return None;
    }
    let cutoff = (lo + hi) * T::half();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        if log_x[i] >= cutoff {
            xs.push(log_x[i]);
            ys.push(log_y[i]);
        }
    }
    ols(&xs, &ys).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let (s, b) = ols(&xs, &ys).unwrap();
        assert!((s - 2.5).abs() < 1e-12);
        assert!((b + 1.0).abs() < 1e-12);
    }

    #[test]
    fn loglog_recovers_power_law() {
        let xs: Vec<f64> = (1..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(0.7)).collect();
        let (s, b) = ols_loglog(&xs, &ys).unwrap();
        assert!((s - 0.7).abs() < 1e-10);
        assert!((b - 3.0f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn tail_exponent_ignores_early_transient() {
        // Transient below x = 100, clean power law above.
        let xs: Vec<f64> = (1..=10000).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| if *x < 100.0 { 5.0 } else { x.powf(0.5) })
            .collect();
        let s = tail_exponent(&xs, &ys, 1.0).unwrap();
        assert!((s - 0.5).abs() < 1e-6, "slope {s}");
    }

    #[test]
    fn plateau_detection() {
        assert!(is_plateau(&[1.0, 1.02, 0.99], 0.05));
        assert!(!is_plateau(&[1.0, 1.2, 0.9], 0.05));
        assert!(!is_plateau::<f64>(&[], 0.05));
    }

    #[test]
    fn upper_half_slope_uses_late_points_only() {
        // Slope 0 early, slope 1 late (in log space).
        let log_x: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let log_y: Vec<f64> = log_x
            .iter()
            .map(|x| if *x < 5.0 { 3.0 } else { 3.0 + (x - 5.0) })
            .collect();
        let s = upper_half_slope(&log_x, &log_y).unwrap();
        assert!((s - 1.0).abs() < 0.02, "slope {s}");
    }

    #[test]
    fn degenerate_inputs_give_none() {
        assert!(ols::<f64>(&[1.0], &[2.0]).is_none());
        assert!(ols(&[1.0, 1.0], &[2.0, 3.0]).is_none());
        assert!(ols_loglog(&[-1.0, -2.0], &[1.0, 2.0]).is_none());
    }
}

//! Strip geometry of planar polylines: best-fit lines, transverse widths,
//! and dyadic prefix histories. These are the raw measurements behind both
//! the trajectory classifier and the quasiperiodic level-set tests.

use crate::geom::{sym2_eigen, V2};
use crate::num::Real;

/// Arc-weighted principal line through a polyline.
#[derive(Clone, Copy, Debug)]
pub struct LineFit<T> {
    pub centroid: V2<T>,
    /// Unit direction of the major principal axis, sign-aligned with the
    /// net displacement so directions compare across prefixes.
    pub direction: V2<T>,
    /// Largest absolute transverse deviation from the line.
    pub width: T,
}

/// Cumulative arc length along a polyline, starting at zero.
pub fn polyline_arcs<T: Real>(points: &[V2<T>]) -> Vec<T> {
    let mut arcs = Vec::with_capacity(points.len());
    let mut acc = T::zero();
    arcs.push(acc);
    for w in points.windows(2) {
        acc += (w[1] - w[0]).norm();
        arcs.push(acc);
    }
    arcs
}

/// Linear interpolation of the polyline position at arc-length `t`.
/// Clamps to the endpoints outside the covered range.
pub fn interpolate_at_arc<T: Real>(points: &[V2<T>], arcs: &[T], t: T) -> V2<T> {
    debug_assert_eq!(points.len(), arcs.len());
    if points.is_empty() {
        return V2::zero();
    }
    if t <= arcs[0] {
        return points[0];
    }
    let last = *arcs.last().unwrap();
    if t >= last {
        return *points.last().unwrap();
    }
    let i = arcs.partition_point(|a| *a < t);
    let (a0, a1) = (arcs[i - 1], arcs[i]);
    let span = a1 - a0;
    if span <= T::zero() {
        return points[i];
    }
    let u = (t - a0) / span;
    points[i - 1] + (points[i] - points[i - 1]) * u
}

/// Fits the principal line of an arc-weighted point cloud. Uneven sampling
/// density along the curve does not bias the fit because each point carries
/// the arc measure around it. Returns `None` for degenerate input.
pub fn fit_line<T: Real>(points: &[V2<T>], arcs: &[T]) -> Option<LineFit<T>> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let weight = |i: usize| -> T {
        let lo = if i == 0 { arcs[0] } else { arcs[i - 1] };
        let hi = if i + 1 == n { arcs[n - 1] } else { arcs[i + 1] };
        (hi - lo) * T::half()
    };
    let mut total = T::zero();
    let mut mean = V2::zero();
    for (i, p) in points.iter().enumerate() {
        let w = weight(i);
        total += w;
        mean += *p * w;
    }
    if total <= T::zero() {
        // Zero-length polyline (repeated points); fall back to plain mean.
        let inv = T::of(1.0 / n as f64);
        let mut m = V2::zero();
        for p in points {
            m += *p;
        }
        let mean = m * inv;
        let d = *points.last().unwrap() - points[0];
        let dir = if d.norm() > T::zero() {
            d.normalized()
        } else {
            V2::new(T::one(), T::zero())
        };
        return Some(LineFit {
            centroid: mean,
            direction: dir,
            width: T::zero(),
        });
    }
    mean = mean / total;
    let (mut cxx, mut cxy, mut cyy) = (T::zero(), T::zero(), T::zero());
    for (i, p) in points.iter().enumerate() {
        let w = weight(i);
        let d = *p - mean;
        cxx += w * d.x * d.x;
        cxy += w * d.x * d.y;
        cyy += w * d.y * d.y;
    }
    let ((_, major), _) = sym2_eigen(cxx, cxy, cyy);
    let disp = *points.last().unwrap() - points[0];
    let direction = if major.dot(disp) < T::zero() {
        -major
    } else {
        major
    };
    let normal = direction.rot90();
    let mut width = T::zero();
    for p in points {
        width = width.max((*p - mean).dot(normal).abs());
    }
    Some(LineFit {
        centroid: mean,
        direction,
        width,
    })
}

/// Strip measurements at dyadic arc-length prefixes L/2^(k-1), ..., L/2, L.
#[derive(Clone, Debug)]
pub struct StripHistory<T> {
    /// Prefix arc lengths, ascending; the last entry is the full length.
    pub arcs: Vec<T>,
    pub widths: Vec<T>,
    pub directions: Vec<V2<T>>,
}

impl<T: Real> StripHistory<T> {
    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }
}

/// Computes the strip history over `levels` dyadic prefixes of the polyline.
/// Prefixes with fewer than four points are skipped.
pub fn dyadic_strip_history<T: Real>(
    points: &[V2<T>],
    arcs: &[T],
    levels: usize,
) -> StripHistory<T> {
    let mut out = StripHistory {
        arcs: Vec::new(),
        widths: Vec::new(),
        directions: Vec::new(),
    };
    let total = match arcs.last() {
        Some(t) if *t > T::zero() => *t,
        _ => return out,
    };
    for k in (0..levels).rev() {
        let prefix = total / T::of(f64::powi(2.0, k as i32));
        let cut = arcs.partition_point(|a| *a <= prefix);
        if cut < 4 {
            continue;
        }
        if let Some(fit) = fit_line(&points[..cut], &arcs[..cut]) {
            out.arcs.push(prefix);
            out.widths.push(fit.width);
            out.directions.push(fit.direction);
        }
    }
    out
}

/// Normalized mean of unit directions and the largest angular deviation
/// from that mean.
pub fn direction_spread<T: Real>(dirs: &[V2<T>]) -> Option<(V2<T>, T)> {
    if dirs.is_empty() {
        return None;
    }
    let mut sum = V2::zero();
    for d in dirs {
        sum += *d;
    }
    if sum.norm() == T::zero() {
        return None;
    }
    let mean = sum.normalized();
    let spread = dirs
        .iter()
        .map(|d| d.angle_to(mean))
        .fold(T::zero(), |a, b| a.max(b));
    Some((mean, spread))
}

#[cfg(test)]
mod tests {
    use super::*;

    type P = V2<f64>;

    fn line_cloud(n: usize, slope: f64, amp: f64) -> Vec<P> {
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64 * 100.0;
                // Bounded sinusoidal wiggle around the line y = slope * x.
                P::new(t, slope * t + amp * (0.37 * t).sin())
            })
            .collect()
    }

    #[test]
    fn arcs_accumulate_segment_lengths() {
        let pts = vec![P::new(0.0, 0.0), P::new(3.0, 4.0), P::new(3.0, 6.0)];
        let arcs = polyline_arcs(&pts);
        assert_eq!(arcs, vec![0.0, 5.0, 7.0]);
    }

    #[test]
    fn interpolation_hits_midpoints() {
        let pts = vec![P::new(0.0, 0.0), P::new(2.0, 0.0), P::new(2.0, 2.0)];
        let arcs = polyline_arcs(&pts);
        let q = interpolate_at_arc(&pts, &arcs, 1.0);
        assert!((q - P::new(1.0, 0.0)).norm() < 1e-15);
        let q = interpolate_at_arc(&pts, &arcs, 3.0);
        assert!((q - P::new(2.0, 1.0)).norm() < 1e-15);
        // Clamped outside the range.
        let q = interpolate_at_arc(&pts, &arcs, 10.0);
        assert!((q - P::new(2.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn fit_recovers_direction_and_width_of_a_wiggly_line() {
        let pts = line_cloud(2001, 0.5, 0.3);
        let arcs = polyline_arcs(&pts);
        let fit = fit_line(&pts, &arcs).unwrap();
        let expect = P::new(1.0, 0.5).normalized();
        assert!(
            fit.direction.angle_to(expect) < 2e-3,
            "direction {:?} vs {:?}",
            fit.direction,
            expect
        );
        // Max transverse deviation of the sine is its amplitude, projected.
        assert!((fit.width - 0.3).abs() < 0.02, "width {}", fit.width);
    }

    #[test]
    fn direction_sign_follows_displacement() {
        let mut pts = line_cloud(501, 0.0, 0.1);
        let arcs = polyline_arcs(&pts);
        let fwd = fit_line(&pts, &arcs).unwrap();
        assert!(fwd.direction.x > 0.9);
        pts.reverse();
        let arcs = polyline_arcs(&pts);
        let bwd = fit_line(&pts, &arcs).unwrap();
        assert!(bwd.direction.x < -0.9);
    }

    #[test]
    fn dyadic_history_plateaus_for_bounded_wiggle() {
        // Fit-direction error adds ~ A/(omega * L) of width at prefix L;
        // a fast wiggle over a long span keeps the tail flat.
        let pts: Vec<P> = (0..16001)
            .map(|i| {
                let t = i as f64 * 0.025;
                P::new(t, 0.25 * t + 0.2 * (2.0 * t).sin())
            })
            .collect();
        let arcs = polyline_arcs(&pts);
        let hist = dyadic_strip_history(&pts, &arcs, 6);
        assert_eq!(hist.len(), 6);
        assert!(hist.arcs.windows(2).all(|w| w[1] > w[0]));
        let last3 = &hist.widths[hist.len() - 3..];
        let lo = last3.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = last3.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo - 1.0 < 0.05, "widths not flat: {last3:?}");
    }

    #[test]
    fn dyadic_history_grows_for_a_parabola() {
        // y = x^2 has width growing with prefix length.
        let pts: Vec<P> = (0..4000)
            .map(|i| {
                let t = i as f64 * 0.05;
                P::new(t, 0.01 * t * t)
            })
            .collect();
        let arcs = polyline_arcs(&pts);
        let hist = dyadic_strip_history(&pts, &arcs, 5);
        assert!(hist
            .widths
            .windows(2)
            .all(|w| w[1] > w[0] * 1.5), "widths {:?}", hist.widths);
    }

    #[test]
    fn spread_of_clustered_directions_is_small() {
        let dirs = vec![
            P::new(1.0, 0.00).normalized(),
            P::new(1.0, 0.01).normalized(),
            P::new(1.0, -0.01).normalized(),
        ];
        let (mean, spread) = direction_spread(&dirs).unwrap();
        assert!(mean.angle_to(P::new(1.0, 0.0)) < 1e-3);
        assert!(spread < 0.02);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(fit_line::<f64>(&[], &[]).is_none());
        assert!(fit_line(&[P::new(1.0, 1.0)], &[0.0]).is_none());
        assert!(direction_spread::<f64>(&[]).is_none());
    }
}

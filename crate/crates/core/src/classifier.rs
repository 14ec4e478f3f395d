//! Trajectory taxonomy: closed, periodic open, topologically regular open
//! (finite strip with an integral carrier plane), chaotic, or undetermined.
//! Strip width and the endpoint secant direction feed the search for the
//! integer plane numbers (m1, m2, m3).

use thiserror::Error;

use crate::field::PlaneSlice;
use crate::fitting::{is_plateau, tail_exponent};
use crate::geom::{V2, V3};
use crate::lattice::{DirectLattice, ReciprocalLattice};
use crate::num::Real;
use crate::strip::{dyadic_strip_history, interpolate_at_arc, StripHistory};
use crate::tracer::{ClosureTag, Trajectory};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("trajectory too short: arc {arc:e} < required {required:e}")]
    TooShort { arc: f64, required: f64 },
    #[error("no integral plane within tolerance: best angle {best_angle:e} for m={m:?}")]
    NoIntegralPlane { best_angle: f64, m: [i64; 3] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Closed,
    PeriodicOpen,
    TopologicallyRegular,
    Chaotic,
    Undetermined,
}

/// Classification outcome with diagnostics. Optional fields are populated
/// per kind: period/shift for periodic kinds, direction and width for open
/// kinds, m only when TopologicallyRegular.
#[derive(Clone, Debug)]
pub struct TrajectoryClass<T> {
    pub kind: Kind,
    pub period: Option<T>,
    pub shift: Option<[i64; 3]>,
    /// Unit vector in the slice plane.
    pub mean_direction: Option<V3<T>>,
    /// Angular scatter of the secant over dyadic prefixes.
    pub direction_spread: Option<T>,
    pub strip_width: Option<T>,
    pub m: Option<[i64; 3]>,
    /// Angle between the measured direction and the integral-plane candidate.
    pub m_angle: Option<T>,
    /// Fitted width-growth exponent (diagnostic for Chaotic).
    pub width_exponent: Option<T>,
    /// Arc length actually used.
    pub trace_arc: T,
}

impl<T: Real> TrajectoryClass<T> {
    fn bare(kind: Kind, trace_arc: T) -> Self {
        Self {
            kind,
            period: None,
            shift: None,
            mean_direction: None,
            direction_spread: None,
            strip_width: None,
            m: None,
            m_angle: None,
            width_exponent: None,
            trace_arc,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifyThresholds<T> {
    /// Relative window for the width plateau over the last dyadic values.
    pub plateau_tol: T,
    pub plateau_count: usize,
    /// Width growth steeper than this exponent counts as chaotic.
    pub min_growth_exponent: T,
    /// Log-decades of arc length used for the growth fit.
    pub growth_decades: T,
    /// Acceptance angle for the integral-plane match.
    pub tol_angle: T,
    pub m_max: i64,
    pub dyadic_levels: usize,
    /// Minimum arc length in units of the reciprocal cell scale.
    pub min_arc_cells: T,
}

impl<T: Real> Default for ClassifyThresholds<T> {
    fn default() -> Self {
        Self {
            plateau_tol: T::of(0.05),
            plateau_count: 3,
            min_growth_exponent: T::of(0.1),
            growth_decades: T::one(),
            tol_angle: T::of(1e-3),
            m_max: 10,
            dyadic_levels: 12,
            min_arc_cells: T::of(10.0),
        }
    }
}

/// In-plane projection of a trajectory with its arc parameterization.
#[derive(Clone, Debug)]
pub struct PlanarTrace<T> {
    pub pts: Vec<V2<T>>,
    pub arcs: Vec<T>,
}

impl<T: Real> PlanarTrace<T> {
    pub fn from_trajectory(traj: &Trajectory<T>, slice: &PlaneSlice<T>) -> Self {
        Self {
            pts: traj.planar(slice),
            arcs: traj.arc.clone(),
        }
    }

    pub fn total_arc(&self) -> T {
        *self.arcs.last().unwrap_or(&T::zero())
    }
}

/// Final strip width and its dyadic history. Errors when the trace is
/// shorter than `min_arc` of arc length.
pub fn strip_width<T: Real>(
    trace: &PlanarTrace<T>,
    levels: usize,
    min_arc: T,
) -> Result<(T, StripHistory<T>), ClassifyError> {
    let arc = trace.total_arc();
    if arc < min_arc {
        return Err(ClassifyError::TooShort {
            arc: arc.to_f64().unwrap_or(0.0),
            required: min_arc.to_f64().unwrap_or(0.0),
        });
    }
    let hist = dyadic_strip_history(&trace.pts, &trace.arcs, levels);
    let width = *hist.widths.last().ok_or(ClassifyError::TooShort {
        arc: arc.to_f64().unwrap_or(0.0),
        required: min_arc.to_f64().unwrap_or(0.0),
    })?;
    Ok((width, hist))
}

/// Endpoint secant direction at the full arc length, with the angular
/// spread of the secants at dyadic prefixes as a reliability measure.
pub fn mean_direction<T: Real>(
    trace: &PlanarTrace<T>,
    levels: usize,
    min_arc: T,
) -> Result<(V2<T>, T), ClassifyError> {
    let total = trace.total_arc();
    if total < min_arc || trace.pts.len() < 4 {
        return Err(ClassifyError::TooShort {
            arc: total.to_f64().unwrap_or(0.0),
            required: min_arc.to_f64().unwrap_or(0.0),
        });
    }
    let start = trace.pts[0];
    let mut dirs = Vec::new();
    for k in (0..levels).rev() {
        let prefix = total / T::of(f64::powi(2.0, k as i32));
        let end = interpolate_at_arc(&trace.pts, &trace.arcs, prefix);
        let d = end - start;
        if d.norm() > T::zero() {
            dirs.push(d.normalized());
        }
    }
    let last = *dirs.last().ok_or(ClassifyError::TooShort {
        arc: total.to_f64().unwrap_or(0.0),
        required: min_arc.to_f64().unwrap_or(0.0),
    })?;
    let spread = dirs
        .iter()
        .map(|d| d.angle_to(last))
        .fold(T::zero(), |a, b| a.max(b));
    Ok((last, spread))
}

/// Finds the primitive integer triple m whose plane, spanned by b_hat's
/// projection, carries the direction: candidate c(m) = b_hat x N(m) with
/// N(m) = m1 l1 + m2 l2 + m3 l3, matched to `dir` up to sign. Ties go to
/// the smallest |m1|+|m2|+|m3|, then lexicographic order; the sign is fixed
/// so the first nonzero component is positive.
pub fn topological_numbers<T: Real>(
    dir: V3<T>,
    b_hat: V3<T>,
    direct: &DirectLattice<T>,
    m_max: i64,
    tol_angle: T,
) -> Result<([i64; 3], T), ClassifyError> {
    let dir = dir.normalized();
    // Exactly parallel candidates differ only by floating noise; a tie
    // window far above that noise keeps the weight rule in charge of
    // degenerate families.
    let tie = T::of(1e-9);
    let mut best: Option<([i64; 3], T, i64)> = None;
    for m1 in -m_max..=m_max {
        for m2 in -m_max..=m_max {
            for m3 in -m_max..=m_max {
                let m = [m1, m2, m3];
                if !is_primitive(m) || !sign_normalized(m) {
                    continue;
                }
                let n = direct.integer_vector(m);
                let c = b_hat.cross(n);
                if c.norm() < T::of(1e-9) {
                    continue;
                }
                let c = c.normalized();
                let a = dir.angle_to(c).min(dir.angle_to(-c));
                let weight = m1.abs() + m2.abs() + m3.abs();
                let better = match &best {
                    None => true,
                    Some((bm, ba, bw)) => {
                        a < *ba - tie
                            || ((a - *ba).abs() <= tie
                                && (weight < *bw || (weight == *bw && m < *bm)))
                    }
                };
                if better {
                    best = Some((m, a, weight));
                }
            }
        }
    }
    let (m, angle, _) = best.ok_or(ClassifyError::NoIntegralPlane {
        best_angle: f64::INFINITY,
        m: [0, 0, 0],
    })?;
    if angle >= tol_angle {
        return Err(ClassifyError::NoIntegralPlane {
            best_angle: angle.to_f64().unwrap_or(f64::NAN),
            m,
        });
    }
    Ok((m, angle))
}


fn is_primitive(m: [i64; 3]) -> bool {
    let g = gcd(gcd(m[0].unsigned_abs(), m[1].unsigned_abs()), m[2].unsigned_abs());
    g == 1
}

fn sign_normalized(m: [i64; 3]) -> bool {
    for v in m {
        if v != 0 {
            return v > 0;
        }
    }
    false
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Full taxonomy of a traced trajectory. Closure tags win outright; open
/// traces are split by the width history: a plateau with an integral plane
/// is TopologicallyRegular, sustained power-law growth is Chaotic, anything
/// else is Undetermined.
pub fn classify_trajectory<T: Real>(
    traj: &Trajectory<T>,
    recip: &ReciprocalLattice<T>,
    slice: &PlaneSlice<T>,
    thresholds: &ClassifyThresholds<T>,
) -> TrajectoryClass<T> {
    let arc = traj.total_arc();
    match traj.closure {
        ClosureTag::ClosedCompact { period } => {
            let mut c = TrajectoryClass::bare(Kind::Closed, arc);
            c.period = Some(period);
            return c;
        }
        ClosureTag::PeriodicOpen { period, shift } => {
            let mut c = TrajectoryClass::bare(Kind::PeriodicOpen, arc);
            c.period = Some(period);
            c.shift = Some(shift);
            let g = recip.integer_vector(shift);
            let b = slice.setup.b_hat;
            let in_plane = g - b * g.dot(b);
            if in_plane.norm() > T::zero() {
                c.mean_direction = Some(in_plane.normalized());
            }
            return c;
        }
        ClosureTag::OpenUndetermined => {}
    }

    let min_arc = thresholds.min_arc_cells * recip.cell_scale();
    if arc < min_arc {
        return TrajectoryClass::bare(Kind::Undetermined, arc);
    }
    let trace = PlanarTrace::from_trajectory(traj, slice);
    let Ok((width, hist)) = strip_width(&trace, thresholds.dyadic_levels, min_arc) else {
        return TrajectoryClass::bare(Kind::Undetermined, arc);
    };
    let Ok((dir2, spread)) = mean_direction(&trace, thresholds.dyadic_levels, min_arc) else {
        return TrajectoryClass::bare(Kind::Undetermined, arc);
    };
    let dir3 = slice.setup.lift_dir(dir2).normalized();

    let n = hist.widths.len();
    let plateau = n >= thresholds.plateau_count
        && is_plateau(
            &hist.widths[n - thresholds.plateau_count..],
            thresholds.plateau_tol,
        );
    if plateau {
        let direct = DirectLattice::new(
            recip.dual_basis()[0],
            recip.dual_basis()[1],
            recip.dual_basis()[2],
        );
        if let Ok((m, angle)) = topological_numbers(
            dir3,
            slice.setup.b_hat,
            &direct,
            thresholds.m_max,
            thresholds.tol_angle,
        ) {
            let mut c = TrajectoryClass::bare(Kind::TopologicallyRegular, arc);
            c.mean_direction = Some(dir3);
            c.direction_spread = Some(spread);
            c.strip_width = Some(width);
            c.m = Some(m);
            c.m_angle = Some(angle);
            return c;
        }
    }

    let exponent = tail_exponent(&hist.arcs, &hist.widths, thresholds.growth_decades);
    if let Some(e) = exponent {
        if e > thresholds.min_growth_exponent {
            let mut c = TrajectoryClass::bare(Kind::Chaotic, arc);
            c.mean_direction = Some(dir3);
            c.direction_spread = Some(spread);
            c.width_exponent = Some(e);
            c.strip_width = Some(width);
            return c;
        }
    }
    let mut c = TrajectoryClass::bare(Kind::Undetermined, arc);
    c.mean_direction = Some(dir3);
    c.direction_spread = Some(spread);
    c.strip_width = Some(width);
    c.width_exponent = exponent;
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::FourierDispersion;
    use crate::field::FieldSetup;
    use crate::rng::derive;
    use crate::tracer::{StepControl, StopReason, Tracer};
    use rand::Rng;
    use std::f64::consts::PI;

    type V = V3<f64>;
    type P = V2<f64>;

    fn z_slice(h: f64) -> PlaneSlice<f64> {
        PlaneSlice::new(FieldSetup::from_direction(V::new(0.0, 0.0, 1.0)), h)
    }

    fn planar(pts: Vec<P>) -> PlanarTrace<f64> {
        let arcs = crate::strip::polyline_arcs(&pts);
        PlanarTrace { pts, arcs }
    }

    #[test]
    fn straight_line_has_zero_width_history() {
        let pts: Vec<P> = (0..2000)
            .map(|i| P::new(i as f64 * 0.1, i as f64 * 0.05))
            .collect();
        let trace = planar(pts);
        let (w, hist) = strip_width(&trace, 8, 1.0).unwrap();
        assert!(w < 1e-12);
        assert!(hist.widths.iter().all(|w| *w < 1e-12));
    }

    #[test]
    fn sinusoid_width_matches_amplitude_with_plateau() {
        // The fit-direction error contributes ~ A/(omega*L) of spurious
        // width; a fast wiggle over a long span sits well inside a plateau.
        let amp = 0.7;
        let pts: Vec<P> = (0..20000)
            .map(|i| {
                let t = i as f64 * 0.05;
                P::new(t, amp * t.sin())
            })
            .collect();
        let trace = planar(pts);
        let (w, hist) = strip_width(&trace, 10, 1.0).unwrap();
        assert!((w - amp).abs() < 0.05 * amp, "width {w}");
        let n = hist.widths.len();
        assert!(
            is_plateau(&hist.widths[n - 3..], 0.05),
            "widths {:?}",
            &hist.widths[n - 3..]
        );
    }

    #[test]
    fn random_walk_width_grows_like_sqrt() {
        let mut rng = derive(7, "classifier-rw", 0);
        let mut y = 0.0;
        let pts: Vec<P> = (0..200_000)
            .map(|i| {
                y += if rng.gen::<bool>() { 1.0 } else { -1.0 };
                P::new(i as f64, y)
            })
            .collect();
        let trace = planar(pts);
        let (_, hist) = strip_width(&trace, 12, 1.0).unwrap();
        let n = hist.widths.len();
        assert!(!is_plateau(&hist.widths[n - 3..], 0.05));
        let e = tail_exponent(&hist.arcs, &hist.widths, 1.5).unwrap();
        assert!(
            (e - 0.5).abs() < 0.2,
            "random walk width exponent {e} not near 1/2"
        );
    }

    #[test]
    fn too_short_trace_is_an_error() {
        let pts: Vec<P> = (0..5).map(|i| P::new(i as f64, 0.0)).collect();
        let trace = planar(pts);
        assert!(matches!(
            strip_width(&trace, 8, 100.0),
            Err(ClassifyError::TooShort { .. })
        ));
        assert!(matches!(
            mean_direction(&trace, 8, 100.0),
            Err(ClassifyError::TooShort { .. })
        ));
    }

    #[test]
    fn topological_numbers_trivial_example() {
        let direct: DirectLattice<f64> = DirectLattice::cubic();
        let (m, angle) = topological_numbers(
            V::new(0.0, 1.0, 0.0),
            V::new(1.0, 0.0, 0.0),
            &direct,
            10,
            1e-3,
        )
        .unwrap();
        assert_eq!(m, [0, 0, 1]);
        assert!(angle < 1e-12);
    }

    #[test]
    fn topological_numbers_reject_unrelated_direction() {
        let direct: DirectLattice<f64> = DirectLattice::cubic();
        let b = V::new(0.0, 0.0, 1.0);
        // A direction at an angle unrelated to any m with small entries.
        let dir = V::new((1.0f64).cos(), (1.0f64).sin(), 0.0);
        let err = topological_numbers(dir, b, &direct, 10, 1e-6).unwrap_err();
        assert!(matches!(err, ClassifyError::NoIntegralPlane { .. }));
    }

    #[test]
    fn topological_numbers_stable_under_sign_and_jitter() {
        let direct: DirectLattice<f64> = DirectLattice::cubic();
        let b = V::new(0.3, 0.2, 0.9).normalized();
        let n = direct.integer_vector([2, -1, 1]);
        let c = b.cross(n).normalized();
        let (m0, _) = topological_numbers(c, b, &direct, 10, 1e-3).unwrap();
        let (m1, _) = topological_numbers(-c, b, &direct, 10, 1e-3).unwrap();
        assert_eq!(m0, m1);
        // Perturbation well under 0.1 * tol_angle must not move the argmin.
        let jitter = (b.cross(c)).normalized() * 5e-5;
        let (m2, _) = topological_numbers((c + jitter).normalized(), b, &direct, 10, 1e-3).unwrap();
        assert_eq!(m0, m2);
    }

    #[test]
    fn recovered_plane_matches_planted_candidate() {
        let direct: DirectLattice<f64> = DirectLattice::cubic();
        let b = V::new(0.23, 0.71, 0.67).normalized();
        let mut rng = derive(11, "classifier-plant", 0);
        for _ in 0..50 {
            let m = loop {
                let cand = [
                    rng.gen_range(-4i64..=4),
                    rng.gen_range(-4i64..=4),
                    rng.gen_range(-4i64..=4),
                ];
                if is_primitive(cand) {
                    break cand;
                }
            };
            let n = direct.integer_vector(m);
            let c = b.cross(n);
            if c.norm() < 1e-9 {
                continue;
            }
            let dir = c.normalized();
            let (got, angle) = topological_numbers(dir, b, &direct, 10, 1e-3).unwrap();
            // The recovered triple may differ from the planted one only if
            // its candidate direction is exactly parallel.
            let c_got = b.cross(direct.integer_vector(got)).normalized();
            assert!(
                dir.angle_to(c_got).min(dir.angle_to(-c_got)) < 1e-10,
                "m {m:?} -> {got:?} angle {angle:e}"
            );
        }
    }

    #[test]
    fn closed_orbit_classifies_as_closed() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let slice = z_slice(0.3);
        let tracer = Tracer::new(&d, slice, 2.5, Some(&lat), StepControl::default());
        let traj = tracer.trace(V::new(0.5, 0.0, 0.3), 100.0).unwrap();
        let class = classify_trajectory(&traj, &lat, &slice, &ClassifyThresholds::default());
        assert_eq!(class.kind, Kind::Closed);
        assert!(class.period.is_some());
        assert!(class.strip_width.is_none());
    }

    #[test]
    fn open_band_classifies_periodic_open_with_consistent_direction() {
        use crate::dispersion::Harmonic;
        use crate::lattice::reciprocal_from_direct;
        let recip = reciprocal_from_direct(&DirectLattice::cubic()).unwrap();
        let d = FourierDispersion::new(
            recip,
            vec![
                Harmonic::new([0, 1, 0], 1.0, 0.0),
                Harmonic::new([0, 0, 1], 0.3, 0.0),
            ],
        );
        let slice = PlaneSlice::new(FieldSetup::from_direction(V::new(1.0, 0.0, 0.0)), 0.0);
        let tracer = Tracer::new(&d, slice, 0.0, Some(&recip), StepControl::default());
        let traj = tracer.trace(V::new(0.0, PI / 2.0, PI / 2.0), 50.0).unwrap();
        let class = classify_trajectory(&traj, &recip, &slice, &ClassifyThresholds::default());
        assert_eq!(class.kind, Kind::PeriodicOpen);
        let g = recip.integer_vector(class.shift.unwrap());
        let dir = class.mean_direction.unwrap();
        // Direction parallel to the in-plane reduction of g.
        let b = slice.setup.b_hat;
        let g_in = (g - b * g.dot(b)).normalized();
        assert!(dir.angle_to(g_in).min(dir.angle_to(-g_in)) < 1e-6);
        assert!(dir.dot(b).abs() < 1e-9);
    }

    #[test]
    fn corrugated_tilted_field_is_topologically_regular_with_m_001() {
        // Dispersion cos(pz) + 0.2 (cos(px) + cos(py)): the carrier of open
        // orbits is the {m = (0,0,1)} plane family.
        use crate::dispersion::Harmonic;
        use crate::lattice::reciprocal_from_direct;
        let direct: DirectLattice<f64> = DirectLattice::cubic();
        let recip = reciprocal_from_direct(&direct).unwrap();
        let d = FourierDispersion::new(
            recip,
            vec![
                Harmonic::new([0, 0, 1], 1.0, 0.0),
                Harmonic::new([1, 0, 0], 0.2, 0.0),
                Harmonic::new([0, 1, 0], 0.2, 0.0),
            ],
        );
        let b = V::new((0.1f64).sin(), 0.0, (0.1f64).cos());
        let slice = PlaneSlice::new(FieldSetup::from_direction(b), 0.1);
        let tracer = Tracer::new(&d, slice, 0.0, Some(&recip), StepControl::default());
        // In-plane coordinates where p_z crosses pi/2 and the 0.2-harmonics
        // cancel, so the seed starts near the level set.
        let v = (PI / 2.0 - 0.1 * (0.1f64).cos()) / (0.1f64).sin();
        let seed = tracer.project_seed(slice.lift(P::new(PI / 3.0, v))).unwrap();
        let mut traj = tracer.trace(seed, 400.0).unwrap();
        while traj.stop == StopReason::Budget && traj.total_arc() < 400.0 {
            tracer.extend(&mut traj, 400.0).unwrap();
        }
        let class = classify_trajectory(&traj, &recip, &slice, &ClassifyThresholds::default());
        match class.kind {
            Kind::TopologicallyRegular => {
                assert_eq!(class.m.unwrap(), [0, 0, 1]);
                assert!(class.strip_width.unwrap() > 0.0);
                let dir = class.mean_direction.unwrap();
                assert!(dir.dot(b).abs() < 1e-9);
            }
            // A tilted rational cut can close up periodically; both carry
            // the same carrier plane.
            Kind::PeriodicOpen => {
                let shift = class.shift.unwrap();
                assert_eq!(shift[2], 0, "shift {shift:?} should lie in the carrier");
            }
            other => panic!("unexpected kind {other:?} ({class:?})"),
        }
    }

    #[test]
    fn synthetic_random_walk_classifies_chaotic() {
        let slice = z_slice(0.0);
        let mut rng = derive(13, "classifier-chaos", 0);
        let mut y = 0.0;
        let mut x = 0.0;
        let mut pts3 = Vec::new();
        let mut s = Vec::new();
        let mut arc = Vec::new();
        let mut acc = 0.0;
        for i in 0..400_000 {
            let step = 0.35;
            x += step;
            y += if rng.gen::<bool>() { step } else { -step };
            acc += step * std::f64::consts::SQRT_2;
            pts3.push(slice.lift(P::new(x, y)));
            s.push(i as f64 * 0.1);
            arc.push(acc);
        }
        let traj = Trajectory {
            points: pts3,
            s,
            arc,
            closure: ClosureTag::OpenUndetermined,
            stop: StopReason::Budget,
            restarts: vec![],
        };
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let class = classify_trajectory(&traj, &lat, &slice, &ClassifyThresholds::default());
        assert_eq!(class.kind, Kind::Chaotic, "{class:?}");
        let e = class.width_exponent.unwrap();
        assert!((e - 0.5).abs() < 0.25, "exponent {e}");
    }
}

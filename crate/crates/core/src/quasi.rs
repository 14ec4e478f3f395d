//! Level lines of quasiperiodic functions on the plane.
//!
//! A quasiperiodic function is a periodic function on the N-torus pulled
//! back along an affine embedding of the plane. Its level lines are traced
//! with the same rotated-gradient flow and saddle policy as plane slices of
//! periodic dispersions; unbounded lines that stay in a strip determine a
//! primitive integer vector naming the integral hyperplane they follow.

use crate::classifier::{mean_direction, strip_width, ClassifyThresholds, PlanarTrace};
use crate::dispersion::Dispersion;
use crate::field::{FieldSetup, PlaneSlice};
use crate::fitting::is_plateau;
use crate::geom::{M33, V2, V3};
use crate::num::Real;
use crate::tracer::{StepControl, StopReason, Tracer};
use thiserror::Error;

/// Angular tolerance for accepting an integer vector as orthogonal to the
/// lifted line direction.
const TOL_ANGLE: f64 = 1e-3;

/// Arc length required by the strip test, in units of the longest planar
/// quasiperiod.
const STRIP_ARC_SCALES: f64 = 1e2;

#[derive(Debug, Error)]
pub enum QuasiError {
    #[error("embedding is degenerate: {0}")]
    BadEmbedding(&'static str),
    #[error("seed does not project onto the level set: residual {residual:e}")]
    SeedOffLevel { residual: f64 },
    #[error("seed sits at a critical point of the level set")]
    CriticalPointEncounter,
    #[error("step size collapsed while tracing the level line")]
    StepFailure,
    #[error("line arc {arc:e} is shorter than the required {required:e}")]
    TooShort { arc: f64, required: f64 },
    #[error("line does not pass the strip test")]
    StripTestFailed,
    #[error("integral plane numbers need four quasiperiods, got {n}")]
    NeedsFourPeriods { n: usize },
    #[error("no integer vector within tolerance of the lifted direction")]
    NoIntegralPlane,
}

/// One Fourier mode of the periodic function on the N-torus.
#[derive(Clone, Debug)]
pub struct QpHarmonic<T> {
    pub k: Vec<i64>,
    pub amplitude: T,
    pub phase: T,
}

impl<T: Real> QpHarmonic<T> {
    pub fn new(k: Vec<i64>, amplitude: T, phase: T) -> Self {
        Self {
            k,
            amplitude,
            phase,
        }
    }
}

/// Planar reduction of one mode: amplitude * cos(wavevector . r + shift).
#[derive(Clone, Copy, Debug)]
struct PlanarMode<T> {
    wavevector: V2<T>,
    amplitude: T,
    shift: T,
}

/// Finite Fourier series on the N-torus pulled back to the plane along
/// r -> U r + offset, with the i-th covector as the i-th row of U.
/// The covectors span the plane of directions (rank 2).
#[derive(Clone, Debug)]
pub struct QuasiperiodicFunction<T> {
    covectors: Vec<V2<T>>,
    offset: Vec<T>,
    harmonics: Vec<QpHarmonic<T>>,
    modes: Vec<PlanarMode<T>>,
}

impl<T: Real> QuasiperiodicFunction<T> {
    pub fn new(
        covectors: Vec<V2<T>>,
        offset: Vec<T>,
        harmonics: Vec<QpHarmonic<T>>,
    ) -> Result<Self, QuasiError> {
        let n = covectors.len();
        if !(3..=4).contains(&n) {
            return Err(QuasiError::BadEmbedding("need 3 or 4 quasiperiods"));
        }
        if offset.len() != n {
            return Err(QuasiError::BadEmbedding("offset length differs from N"));
        }
        if harmonics.is_empty() {
            return Err(QuasiError::BadEmbedding("no harmonics"));
        }
        if harmonics.iter().any(|h| h.k.len() != n) {
            return Err(QuasiError::BadEmbedding("harmonic index length differs from N"));
        }
        let scale = covectors
            .iter()
            .map(|u| u.norm())
            .fold(T::zero(), |a, b| a.max(b));
        let rank2 = covectors.iter().enumerate().any(|(i, a)| {
            covectors[i + 1..]
                .iter()
                .any(|b| a.perp_dot(*b).abs() > T::of(1e-12) * scale * scale)
        });
        if !rank2 {
            return Err(QuasiError::BadEmbedding("covectors do not span the plane"));
        }
        let modes: Vec<PlanarMode<T>> = harmonics
            .iter()
            .map(|h| {
                let mut wavevector = V2::zero();
                let mut shift = h.phase;
                for (i, &ki) in h.k.iter().enumerate() {
                    let c = T::of(ki as f64);
                    wavevector = wavevector + covectors[i] * c;
                    shift = shift + offset[i] * c;
                }
                PlanarMode {
                    wavevector,
                    amplitude: h.amplitude,
                    shift,
                }
            })
            .collect();
        if modes.iter().all(|m| m.wavevector.norm() <= T::of(1e-12)) {
            return Err(QuasiError::BadEmbedding("every harmonic is constant on the plane"));
        }
        Ok(Self {
            covectors,
            offset,
            harmonics,
            modes,
        })
    }

    pub fn quasiperiods(&self) -> usize {
        self.covectors.len()
    }

    pub fn covectors(&self) -> &[V2<T>] {
        &self.covectors
    }

    pub fn offset(&self) -> &[T] {
        &self.offset
    }

    pub fn harmonics(&self) -> &[QpHarmonic<T>] {
        &self.harmonics
    }

    pub fn value(&self, r: V2<T>) -> T {
        self.modes
            .iter()
            .map(|m| m.amplitude * (m.wavevector.dot(r) + m.shift).cos())
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn planar_gradient(&self, r: V2<T>) -> V2<T> {
        let mut g = V2::zero();
        for m in &self.modes {
            let s = (m.wavevector.dot(r) + m.shift).sin();
            g = g - m.wavevector * (m.amplitude * s);
        }
        g
    }

    /// Longest planar wavelength among the nonconstant harmonics; sets the
    /// arc scale on which quasiperiodicity is resolvable.
    pub fn quasiperiod_scale(&self) -> T {
        let two_pi = T::of(std::f64::consts::TAU);
        self.modes
            .iter()
            .filter(|m| m.wavevector.norm() > T::of(1e-12))
            .map(|m| two_pi / m.wavevector.norm())
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Coordinates of a planar direction in the period basis: w_i = u_i . d.
    pub fn lift_direction(&self, d: V2<T>) -> Vec<T> {
        self.covectors.iter().map(|u| u.dot(d)).collect()
    }
}

/// Thin named wrapper over value evaluation.
pub fn evaluate_qp<T: Real>(qp: &QuasiperiodicFunction<T>, r: V2<T>) -> T {
    qp.value(r)
}

/// The plane z = 0 carries the quasiperiodic function as a dispersion, so
/// level lines inherit the slice tracer's stepping, projection, and saddle
/// policy unchanged.
struct PlanarQp<'a, T> {
    qp: &'a QuasiperiodicFunction<T>,
}

impl<'a, T: Real> Dispersion<T> for PlanarQp<'a, T> {
    fn energy(&self, p: V3<T>) -> T {
        self.qp.value(V2::new(p.x, p.y))
    }

    fn gradient(&self, p: V3<T>) -> V3<T> {
        let g = self.qp.planar_gradient(V2::new(p.x, p.y));
        V3::new(g.x, g.y, T::zero())
    }

    fn hessian(&self, p: V3<T>) -> M33<T> {
        let r = V2::new(p.x, p.y);
        let mut h = M33::zero();
        for m in &self.qp.modes {
            let c = (m.wavevector.dot(r) + m.shift).cos();
            let k3 = V3::new(m.wavevector.x, m.wavevector.y, T::zero());
            h = h.add(&M33::outer(k3, k3).scale(-m.amplitude * c));
        }
        h
    }
}

/// Why a traced level line ended; Closed loops are bounded, Budget lines
/// ran to the requested arc length without closing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineStop {
    Closed,
    Budget,
    CriticalPoint,
}

/// Strip fit of an unbounded line: deviation from the mean-direction ray
/// and whether the dyadic width history has plateaued.
#[derive(Clone, Copy, Debug)]
pub struct StripFit<T> {
    pub width: T,
    pub mean_direction: V2<T>,
    pub passes: bool,
}

/// Traced level line with its arc parameterization and boundedness tag.
#[derive(Clone, Debug)]
pub struct LevelLine<T> {
    pub points: Vec<V2<T>>,
    pub arcs: Vec<T>,
    pub level: T,
    pub stop: LineStop,
    pub strip: Option<StripFit<T>>,
}

impl<T: Real> LevelLine<T> {
    pub fn total_arc(&self) -> T {
        *self.arcs.last().unwrap_or(&T::zero())
    }
}

/// Traces the level line of `qp` through `seed` up to arc length `l_max`
/// with the planar rotated-gradient flow. The seed is first projected onto
/// the level set; level conservation along the line is kept by the same
/// projection that maintains energy on slice orbits.
pub fn trace_level_line<T: Real>(
    qp: &QuasiperiodicFunction<T>,
    level: T,
    seed: V2<T>,
    l_max: T,
    ctrl: &StepControl<T>,
) -> Result<LevelLine<T>, QuasiError> {
    let disp = PlanarQp { qp };
    let setup = FieldSetup::from_direction(V3::new(T::zero(), T::zero(), T::one()));
    let slice = PlaneSlice::new(setup, T::zero());
    let tracer = Tracer::new(&disp, slice, level, None, ctrl.clone());
    let seed3 = V3::new(seed.x, seed.y, T::zero());
    let projected = tracer
        .project_seed(seed3)
        .map_err(|e| match e {
            crate::tracer::TraceError::SeedOffSurface { residual } => {
                QuasiError::SeedOffLevel { residual }
            }
        })?;

    // Arc accrues at the flow speed |grad f|; chunk the s-budget and extend
    // until the arc target is met.
    let rate0 = qp
        .planar_gradient(V2::new(projected.x, projected.y))
        .norm()
        .max(T::of(1e-3));
    let mut traj = tracer
        .trace(projected, l_max / rate0 * T::of(1.05))
        .map_err(|_| QuasiError::CriticalPointEncounter)?;
    let mut extensions = 0;
    while traj.stop == StopReason::Budget && traj.total_arc() < l_max && extensions < 16 {
        let rate = (traj.total_arc() / traj.total_s()).max(T::of(1e-3));
        let missing = (l_max - traj.total_arc()) / rate * T::of(1.05);
        if tracer.extend(&mut traj, missing).is_err() {
            break;
        }
        extensions += 1;
    }

    let stop = match traj.stop {
        StopReason::Closure => LineStop::Closed,
        StopReason::Budget => LineStop::Budget,
        StopReason::Saddle => {
            if traj.points.len() < 8 {
                return Err(QuasiError::CriticalPointEncounter);
            }
            LineStop::CriticalPoint
        }
        StopReason::StepFailure => return Err(QuasiError::StepFailure),
    };

    // Truncate to the arc budget; extension chunks may overshoot.
    let mut cut = traj.arc.partition_point(|a| *a <= l_max);
    cut = cut.max(2).min(traj.points.len());
    let points: Vec<V2<T>> = traj.points[..cut]
        .iter()
        .map(|p| V2::new(p.x, p.y))
        .collect();
    let arcs = traj.arc[..cut].to_vec();
    Ok(LevelLine {
        points,
        arcs,
        level,
        stop,
        strip: None,
    })
}

/// Strip width, mean direction, and the plateau verdict for an unbounded
/// line. Requires arc length of at least a hundred quasiperiod scales so
/// the slowest harmonic is resolved.
pub fn strip_and_direction_test<T: Real>(
    line: &LevelLine<T>,
    qp: &QuasiperiodicFunction<T>,
) -> Result<StripFit<T>, QuasiError> {
    let required = T::of(STRIP_ARC_SCALES) * qp.quasiperiod_scale();
    let arc = line.total_arc();
    if arc < required {
        return Err(QuasiError::TooShort {
            arc: arc.to_f64().unwrap_or(0.0),
            required: required.to_f64().unwrap_or(0.0),
        });
    }
    let th = ClassifyThresholds::<T>::default();
    let trace = PlanarTrace {
        pts: line.points.clone(),
        arcs: line.arcs.clone(),
    };
    let (width, hist) = strip_width(&trace, th.dyadic_levels, required)
        .map_err(|_| QuasiError::TooShort {
            arc: arc.to_f64().unwrap_or(0.0),
            required: required.to_f64().unwrap_or(0.0),
        })?;
    let (dir, _) = mean_direction(&trace, th.dyadic_levels, required)
        .map_err(|_| QuasiError::TooShort {
            arc: arc.to_f64().unwrap_or(0.0),
            required: required.to_f64().unwrap_or(0.0),
        })?;
    // Widths at the roundoff scale of the arc are zeros, not data; without
    // the floor an exactly straight line fails the relative plateau check
    // on noise that grows with the prefix length.
    let floor = T::of(1e-10) * arc;
    let n = hist.widths.len();
    let tail: Vec<T> = hist.widths[n.saturating_sub(th.plateau_count)..]
        .iter()
        .map(|w| w.max(floor))
        .collect();
    let passes = n >= th.plateau_count && is_plateau(&tail, th.plateau_tol);
    Ok(StripFit {
        width,
        mean_direction: dir,
        passes,
    })
}

fn is_primitive4(m: [i64; 4]) -> bool {
    fn gcd(a: i64, b: i64) -> i64 {
        let (mut a, mut b) = (a.abs(), b.abs());
        while b != 0 {
            let t = a % b;
            a = b;
            b = t;
        }
        a
    }
    let g = gcd(gcd(m[0], m[1]), gcd(m[2], m[3]));
    g == 1
}

fn sign_normalized4(m: [i64; 4]) -> bool {
    for &c in &m {
        if c != 0 {
            return c > 0;
        }
    }
    false
}

/// Primitive integer vector naming the integral hyperplane an unbounded
/// strip line follows: the line's mean direction lifts to w in the period
/// basis, and the best mu has |mu . w| / (|mu| |w|) below 1e-3. Among the
/// accepted candidates the smallest |mu_1|+...+|mu_4| wins (then the
/// smallest angle), so accidental near-orthogonal vectors with large
/// entries never displace the plane actually carrying the line.
pub fn integral_plane_numbers<T: Real>(
    line: &LevelLine<T>,
    qp: &QuasiperiodicFunction<T>,
    m_max: i64,
) -> Result<[i64; 4], QuasiError> {
    let n = qp.quasiperiods();
    if n != 4 {
        return Err(QuasiError::NeedsFourPeriods { n });
    }
    let fit = strip_and_direction_test(line, qp)?;
    if !fit.passes {
        return Err(QuasiError::StripTestFailed);
    }
    let w = qp.lift_direction(fit.mean_direction);
    let wn = w.iter().fold(T::zero(), |a, b| a + *b * *b).sqrt();
    if wn <= T::zero() {
        return Err(QuasiError::NoIntegralPlane);
    }
    let tol = T::of(TOL_ANGLE);
    let mut best: Option<(i64, T, [i64; 4])> = None;
    for m1 in -m_max..=m_max {
        for m2 in -m_max..=m_max {
            for m3 in -m_max..=m_max {
                for m4 in -m_max..=m_max {
                    let m = [m1, m2, m3, m4];
                    if !is_primitive4(m) || !sign_normalized4(m) {
                        continue;
                    }
                    let mut dot = T::zero();
                    let mut norm2 = T::zero();
                    for (i, &c) in m.iter().enumerate() {
                        let cf = T::of(c as f64);
                        dot = dot + cf * w[i];
                        norm2 = norm2 + cf * cf;
                    }
                    let ratio = dot.abs() / (norm2.sqrt() * wn);
                    if ratio >= tol {
                        continue;
                    }
                    let weight: i64 = m.iter().map(|c| c.abs()).sum();
                    let better = match &best {
                        None => true,
                        Some((bw, br, bm)) => {
                            (weight, ratio) < (*bw, *br)
                                || (weight == *bw && ratio == *br && m < *bm)
                        }
                    };
                    if better {
                        best = Some((weight, ratio, m));
                    }
                }
            }
        }
    }
    best.map(|(_, _, m)| m).ok_or(QuasiError::NoIntegralPlane)
}

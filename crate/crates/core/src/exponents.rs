//! Deviation exponents of open trajectories.
//!
//! Planar displacement from the start point is sampled at geometric arc
//! frames l_k = l0 * gamma^k. An ensemble of such records yields principal
//! growth directions (eigenvectors of the second moment of normalized
//! endpoint displacements) and exponent estimates nu2 >= nu3 from
//! upper-envelope log-log fits: the envelope over the ensemble approximates
//! the limsup growth law, which a mean fit would underestimate.
//!
//! `plane_component_census` counts unbounded level-set components crossing
//! growing windows as an independent cross-check of the single-component
//! versus many-components dichotomy. Counting is reliable at regular
//! levels; a level that hits saddle values exactly is resolved cell by
//! cell inside the marcher and the verdict may degrade to Inconclusive.

use thiserror::Error;

use crate::contour::{contour_lines, ContourError, Window};
use crate::dispersion::Dispersion;
use crate::field::PlaneSlice;
use crate::fitting::ols;
use crate::geom::{sym2_eigen, V2};
use crate::num::Real;
use crate::strip::interpolate_at_arc;
use crate::tracer::{ClosureTag, Trajectory};

/// Smallest admissible top frame index: a record must reach l0 * gamma^6.
pub const MIN_FRAME_INDEX: usize = 6;

#[derive(Debug, Error)]
pub enum ExponentError {
    /// Arc too short for the required frame ladder. Closed orbits report
    /// an infinite requirement: their displacement never grows.
    #[error("trajectory arc {arc} does not reach the frame ladder top {required}")]
    TooShort { arc: f64, required: f64 },
    #[error("ensemble has {have} records, {need} required")]
    NotEnoughRecords { have: usize, need: usize },
    #[error("records share no common frame")]
    NoCommonFrames,
    #[error("common frames span {decades:.2} decades, {required:.2} required")]
    ShortSpan { decades: f64, required: f64 },
    /// Second moments nearly isotropic; directions carry little meaning.
    #[error("moment eigenvalue ratio {ratio:.4} below 1.05; directions are isotropic")]
    DegenerateMoments {
        dir_fast: [f64; 2],
        dir_slow: [f64; 2],
        ratio: f64,
    },
    #[error("envelope fit residual {residual:.3} exceeds 0.1 log units")]
    BadFit { residual: f64 },
}

/// Geometric frame ladder l_k = l0 * gamma^k, k = 0..count.
#[derive(Clone, Copy, Debug)]
pub struct FrameSpec<T> {
    pub l0: T,
    pub gamma: T,
    /// Hard cap on the number of frames taken from one trajectory.
    pub max_frames: usize,
}

impl<T: Real> Default for FrameSpec<T> {
    fn default() -> Self {
        Self {
            l0: T::one(),
            gamma: T::of(2.0),
            max_frames: 48,
        }
    }
}

/// Planar displacements of one trajectory at the frame arcs.
#[derive(Clone, Debug)]
pub struct DisplacementRecord<T> {
    pub frame_lengths: Vec<T>,
    pub displacements: Vec<V2<T>>,
    pub trajectory_id: u64,
}

/// Exponent fit over an ensemble of displacement records.
#[derive(Clone, Copy, Debug)]
pub struct ExponentEstimate<T> {
    pub nu2: T,
    pub nu3: T,
    pub dir_fast: V2<T>,
    pub dir_slow: V2<T>,
    /// Largest RMS residual of the two envelope fits, in log10 units.
    pub envelope_residual: T,
    pub n_trajectories: usize,
}

/// Samples planar displacement from the start point at each frame arc.
/// Frames use arc length, not the Hamiltonian parameter: the two differ
/// near saddles but agree to main order elsewhere.
pub fn record_displacements<T: Real>(
    traj: &Trajectory<T>,
    slice: &PlaneSlice<T>,
    frame: FrameSpec<T>,
    trajectory_id: u64,
) -> Result<DisplacementRecord<T>, ExponentError> {
    assert!(frame.l0 > T::zero() && frame.gamma > T::one(), "bad frame ladder");
    if let ClosureTag::ClosedCompact { .. } = traj.closure {
        return Err(ExponentError::TooShort {
            arc: traj.total_arc().to_f64().unwrap_or(0.0),
            required: f64::INFINITY,
        });
    }
    let total = traj.total_arc();
    let mut frame_lengths = Vec::new();
    let mut l = frame.l0;
    while l <= total && frame_lengths.len() < frame.max_frames {
        frame_lengths.push(l);
        l = l * frame.gamma;
    }
    if frame_lengths.len() < MIN_FRAME_INDEX + 1 {
        let required = frame.l0.to_f64().unwrap_or(1.0)
            * frame.gamma.to_f64().unwrap_or(2.0).powi(MIN_FRAME_INDEX as i32);
        return Err(ExponentError::TooShort {
            arc: total.to_f64().unwrap_or(0.0),
            required,
        });
    }
    let pts = traj.planar(slice);
    let origin = pts[0];
    let displacements = frame_lengths
        .iter()
        .map(|&lk| interpolate_at_arc(&pts, &traj.arc, lk) - origin)
        .collect();
    Ok(DisplacementRecord {
        frame_lengths,
        displacements,
        trajectory_id,
    })
}

const MIN_RECORDS: usize = 8;

/// Index of the last frame shared by every record.
fn last_common_frame<T>(records: &[DisplacementRecord<T>]) -> Result<usize, ExponentError> {
    let common = records
        .iter()
        .map(|r| r.frame_lengths.len())
        .min()
        .unwrap_or(0);
    if common == 0 {
        return Err(ExponentError::NoCommonFrames);
    }
    Ok(common - 1)
}

/// Principal growth directions: eigen-directions of the ensemble second
/// moment of normalized displacements at the largest common frame.
pub fn principal_growth_directions<T: Real>(
    records: &[DisplacementRecord<T>],
) -> Result<(V2<T>, V2<T>), ExponentError> {
    if records.len() < MIN_RECORDS {
        return Err(ExponentError::NotEnoughRecords {
            have: records.len(),
            need: MIN_RECORDS,
        });
    }
    let top = last_common_frame(records)?;
    let mut a = T::zero();
    let mut b = T::zero();
    let mut c = T::zero();
    let mut n = 0usize;
    for rec in records {
        let d = rec.displacements[top];
        if !(d.norm() > T::zero()) {
            continue;
        }
        let u = d.normalized();
        a += u.x * u.x;
        b += u.x * u.y;
        c += u.y * u.y;
        n += 1;
    }
    if n == 0 {
        return Err(ExponentError::NoCommonFrames);
    }
    let w = T::one() / T::of(n as f64);
    let ((l1, v1), (l2, v2)) = sym2_eigen(a * w, b * w, c * w);
    let floor = T::of(1e-12);
    let ratio = l1 / l2.max(floor);
    if ratio < T::of(1.05) {
        return Err(ExponentError::DegenerateMoments {
            dir_fast: [v1.x.to_f64().unwrap_or(0.0), v1.y.to_f64().unwrap_or(0.0)],
            dir_slow: [v2.x.to_f64().unwrap_or(0.0), v2.y.to_f64().unwrap_or(0.0)],
            ratio: ratio.to_f64().unwrap_or(1.0),
        });
    }
    Ok((v1, v2))
}

/// OLS of log10 envelope vs log10 arc over the upper half of the log-arc
/// range. Returns (slope, RMS residual in log10 units).
fn envelope_fit<T: Real>(log_l: &[T], log_env: &[T]) -> Option<(T, T)> {
    let lo = log_l.iter().copied().fold(T::infinity(), T::min);
    let hi = log_l.iter().copied().fold(T::neg_infinity(), T::max);
    let cut = (lo + hi) * T::half();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&x, &y) in log_l.iter().zip(log_env) {
        if x >= cut {
            xs.push(x);
            ys.push(y);
        }
    }
    let (slope, intercept) = ols(&xs, &ys)?;
    let mut rss = T::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        let r = y - (intercept + slope * x);
        rss += r * r;
    }
    let rms = (rss / T::of(xs.len() as f64)).sqrt();
    Some((slope, rms))
}

/// Envelope exponents along the two principal directions. The limsup of
/// the growth law is approximated by the maximum over the ensemble at each
/// frame; slopes are clamped to (0, 1].
pub fn estimate_exponents<T: Real>(
    records: &[DisplacementRecord<T>],
    dirs: (V2<T>, V2<T>),
) -> Result<ExponentEstimate<T>, ExponentError> {
    if records.len() < MIN_RECORDS {
        return Err(ExponentError::NotEnoughRecords {
            have: records.len(),
            need: MIN_RECORDS,
        });
    }
    let top = last_common_frame(records)?;
    let frames = &records[0].frame_lengths;
    let decades = (frames[top] / frames[0]).log10();
    if decades < T::of(3.0) {
        return Err(ExponentError::ShortSpan {
            decades: decades.to_f64().unwrap_or(0.0),
            required: 3.0,
        });
    }
    let mut fitted = [(T::zero(), T::zero()); 2];
    for (slot, dir) in [dirs.0, dirs.1].into_iter().enumerate() {
        let mut log_l = Vec::with_capacity(top + 1);
        let mut log_env = Vec::with_capacity(top + 1);
        for k in 0..=top {
            let env = records
                .iter()
                .map(|r| r.displacements[k].dot(dir).abs())
                .fold(T::zero(), T::max);
            if env > T::zero() {
                log_l.push(frames[k].log10());
                log_env.push(env.log10());
            }
        }
        let (slope, rms) = envelope_fit(&log_l, &log_env).ok_or(ExponentError::NoCommonFrames)?;
        if rms > T::of(0.1) {
            return Err(ExponentError::BadFit {
                residual: rms.to_f64().unwrap_or(f64::INFINITY),
            });
        }
        fitted[slot] = (slope.min(T::one()).max(T::of(1e-3)), rms);
    }
    let ((mut nu2, r2), (mut nu3, r3)) = (fitted[0], fitted[1]);
    let (mut dir_fast, mut dir_slow) = dirs;
    if nu3 > nu2 {
        std::mem::swap(&mut nu2, &mut nu3);
        std::mem::swap(&mut dir_fast, &mut dir_slow);
    }
    Ok(ExponentEstimate {
        nu2,
        nu3,
        dir_fast,
        dir_slow,
        envelope_residual: r2.max(r3),
        n_trajectories: records.len(),
    })
}

/// Census verdict for the unbounded-component count across windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CensusVerdict {
    SingleComponent,
    ManyComponents,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct ComponentCensus<T> {
    pub verdict: CensusVerdict,
    pub window_sides: Vec<T>,
    pub counts: Vec<usize>,
}

/// Halo factor: components are merged within a window this much larger
/// than the one being counted.
const HALO: f64 = 3.0;
/// Cells across the smallest halo window.
const BASE_CELLS: usize = 512;
const MAX_CELLS: usize = 4096;

/// Counts unbounded level-set components of `g = 0` crossing centered
/// square windows of the given sides. A component is one open polyline of
/// the halo window that meets the inner window; pieces of one component
/// that part and rejoin outside the halo stay distinct.
pub fn census_plane<T: Real>(g: impl Fn(V2<T>) -> T, window_sides: &[T]) -> ComponentCensus<T> {
    assert!(window_sides.len() >= 3, "need at least 3 windows");
    assert!(
        window_sides.windows(2).all(|w| w[1] > w[0]),
        "window sides must increase"
    );
    let cell = window_sides[0] * T::of(HALO / BASE_CELLS as f64);

    let mut counts = Vec::with_capacity(window_sides.len());
    for &side in window_sides {
        let halo_half = side * T::of(HALO / 2.0);
        let halo = Window::centered(halo_half, halo_half);
        let n = ((halo.width() / cell).to_f64().unwrap_or(BASE_CELLS as f64).ceil() as usize)
            .clamp(BASE_CELLS, MAX_CELLS);
        let inner = Window::centered(side * T::half(), side * T::half());
        let count = match contour_lines(&g, halo, n, T::zero()) {
            Ok(lines) => lines
                .iter()
                .filter(|l| !l.closed && l.points.iter().any(|p| inner.contains(*p)))
                .count(),
            Err(ContourError::EmptyLevelSet) => 0,
            Err(e) => panic!("census window failed: {e}"),
        };
        counts.push(count);
    }

    let all_one = counts.iter().all(|&c| c == 1);
    let growing = counts.windows(2).all(|w| w[1] >= w[0])
        && counts.last().unwrap() > counts.first().unwrap()
        && *counts.last().unwrap() >= 3;
    let verdict = if all_one {
        CensusVerdict::SingleComponent
    } else if growing {
        CensusVerdict::ManyComponents
    } else {
        CensusVerdict::Inconclusive
    };
    ComponentCensus {
        verdict,
        window_sides: window_sides.to_vec(),
        counts,
    }
}

/// Census of the slice function `eps(lift(r)) - fermi` on the section plane.
pub fn plane_component_census<T: Real, D: Dispersion<T>>(
    disp: &D,
    slice: &PlaneSlice<T>,
    fermi: T,
    window_sides: &[T],
) -> ComponentCensus<T> {
    census_plane(|r| disp.energy(slice.lift(r)) - fermi, window_sides)
}

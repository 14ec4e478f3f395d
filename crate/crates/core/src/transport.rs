//! Conductivity in the tau-approximation, assembled from traced orbits.
//!
//! The kernel average along an orbit is
//!   <v>_B(s) = (1/L) * int_{-inf}^{s} v(s') exp((s'-s)/L) ds',  L = omega_B*tau,
//! evaluated exactly for the piecewise-linear interpolant of the sampled
//! velocity. Periodic orbits resum the kernel over all past windings in
//! closed form; open orbits carry an explicit history of length
//! L*ln(1/truncation) so the dropped tail weighs less than `truncation`.
//!
//! The tensor is the surface quadrature
//!   sigma^{ik}(L) ~ sum_slices sum_branches int ds v^i(s) <v^k>_B(s)
//! with the measure dh ds (equal to d^3p restricted to the energy level),
//! taken over the portion of each branch inside one in-plane cell window so
//! every surface point counts once. The result is reported as a density per
//! sampled phase-space volume and scaled by a calibration constant fixed on
//! the free-electron band, where L = 0 must give sigma = sigma0 * I.
//!
//! The magnetic-breakdown correction replaces L by
//! L_eff = 1/(1/L + 1/L1) with L1 read off the close-approach statistics of
//! the traced curves, and rescales the tensor by L_eff/L because the unit
//! sigma0 itself carries one power of the relaxation time.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::classifier::PlanarTrace;
use crate::contour::{contour_lines, Window};
use crate::dispersion::{Dispersion, SphericalBand};
use crate::field::{FieldSetup, PlaneSlice};
use crate::fitting::ols;
use crate::geom::{M33, V2, V3};
use crate::lattice::{reciprocal_from_direct, DirectLattice, ReciprocalLattice};
use crate::num::Real;
use crate::rng;
use crate::tracer::{ClosureTag, StepControl, StopReason, Tracer, Trajectory};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("no Fermi contour on any sampled slice")]
    EmptySurface,
    #[error("closure tag carries no period")]
    NotPeriodic,
    #[error("history {have:.3} shorter than the kernel memory {need:.3}")]
    InsufficientHistory { have: f64, need: f64 },
    #[error("evaluation parameter {s:.3} outside the sampled span")]
    OutsideSamples { s: f64 },
    #[error("no close approaches at this separation")]
    NoCloseApproaches,
    #[error("slope fit impossible: {reason}")]
    BadFit { reason: String },
    #[error("bad transport parameters: {reason}")]
    BadParams { reason: String },
}

/// Schematic breakdown model: the hop distance shrinks with the field as
/// delta_p = kappa / sqrt(L).
#[derive(Clone, Copy, Debug)]
pub struct BreakdownModel<T> {
    pub kappa: T,
}

#[derive(Clone, Debug)]
pub struct TransportParams<T> {
    /// Strictly increasing, positive (zero allowed for the delta-kernel limit).
    pub lambdas: Vec<T>,
    /// Relative weight at which the kernel tail is dropped, in (0, 1e-4].
    pub truncation: T,
    pub breakdown: Option<BreakdownModel<T>>,
}

impl<T: Real> Default for TransportParams<T> {
    fn default() -> Self {
        Self {
            lambdas: Vec::new(),
            truncation: T::of(1e-8),
            breakdown: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CarrierFilter {
    All,
    /// Drops compact orbits; periodic-open and undetermined carriers stay.
    OpenOnly,
}

/// Surface quadrature plan: stratified slice offsets along b_hat and one
/// in-plane cell window per slice in which branch arcs are integrated.
#[derive(Clone, Debug)]
pub struct SliceSampling<T> {
    pub n_slices: usize,
    /// Slice span along b_hat in reciprocal cells; >= 32 approximates the
    /// torus average for irrational directions.
    pub span_cells: usize,
    /// In-plane window side in units of the cell scale.
    pub window_cells: T,
    /// Marching-squares grid used to seed branches.
    pub grid_n: usize,
    pub seed: u64,
    /// Stratified jitter of the slice offsets; midpoints when false.
    pub jitter: bool,
    /// Forward tracing chunk in s-units.
    pub s_chunk: T,
    pub max_chunks: usize,
    pub carriers: CarrierFilter,
    pub ctrl: StepControl<T>,
}

impl<T: Real> Default for SliceSampling<T> {
    fn default() -> Self {
        let mut ctrl = StepControl::default();
        // The quadrature error is O(max_step^2); 0.05 keeps it below the
        // percent-level acceptance tolerances.
        ctrl.max_step = T::of(0.05);
        Self {
            n_slices: 48,
            span_cells: 32,
            window_cells: T::one(),
            grid_n: 192,
            seed: 0x7a57,
            jitter: true,
            s_chunk: T::of(64.0),
            max_chunks: 64,
            carriers: CarrierFilter::All,
            ctrl,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConductivityTensor<T> {
    pub lambda: T,
    /// Equals `lambda` without breakdown; the merged rate with it.
    pub lambda_eff: T,
    /// In units of sigma0 = n e^2 tau / m*.
    pub sigma: M33<T>,
    /// The <v^i><v^k> quadrature accumulated in the same sweep; equals the
    /// symmetric part of `sigma` on full periods.
    pub sym_quadrature: M33<T>,
}

impl<T: Real> ConductivityTensor<T> {
    pub fn symmetric_part(&self) -> M33<T> {
        symmetric_part(&self.sigma)
    }

    pub fn antisymmetric_part(&self) -> M33<T> {
        antisymmetric_part(&self.sigma)
    }
}

pub fn symmetric_part<T: Real>(m: &M33<T>) -> M33<T> {
    let mut out = M33::zero();
    for i in 0..3 {
        for k in 0..3 {
            out.m[i][k] = (m.m[i][k] + m.m[k][i]) * T::half();
        }
    }
    out
}

pub fn antisymmetric_part<T: Real>(m: &M33<T>) -> M33<T> {
    let mut out = M33::zero();
    for i in 0..3 {
        for k in 0..3 {
            out.m[i][k] = (m.m[i][k] - m.m[k][i]) * T::half();
        }
    }
    out
}

/// Conductivity along the unit direction `e`: e . sigma . e.
pub fn directional_component<T: Real>(m: &M33<T>, e: V3<T>) -> T {
    e.dot(m.mul_vec(e))
}

#[derive(Clone, Debug)]
pub struct ConductivityCurve<T> {
    pub samples: Vec<ConductivityTensor<T>>,
    /// Branch integrations cut short by the tracing budget.
    pub truncated_runs: usize,
}

impl<T: Real> ConductivityCurve<T> {
    pub fn lambdas(&self) -> Vec<T> {
        self.samples.iter().map(|t| t.lambda).collect()
    }

    pub fn component(&self, i: usize, k: usize) -> Vec<T> {
        self.samples.iter().map(|t| t.sigma.m[i][k]).collect()
    }

    pub fn directional(&self, e: V3<T>) -> Vec<T> {
        self.samples
            .iter()
            .map(|t| directional_component(&t.sigma, e))
            .collect()
    }

    pub fn slope(
        &self,
        i: usize,
        k: usize,
        window: (T, T),
    ) -> Result<SlopeFit<T>, TransportError> {
        asymptotic_slope(&self.lambdas(), &self.component(i, k), window)
    }
}

/// History span after which the dropped kernel tail weighs `truncation`.
fn kernel_memory<T: Real>(lambda: T, truncation: T) -> T {
    if lambda <= T::zero() {
        T::zero()
    } else {
        -lambda * truncation.ln()
    }
}

fn check_truncation<T: Real>(truncation: T) -> Result<(), TransportError> {
    if truncation > T::zero() && truncation <= T::of(1e-4) {
        Ok(())
    } else {
        Err(TransportError::BadParams {
            reason: "truncation must lie in (0, 1e-4]".into(),
        })
    }
}

/// Exponential-kernel accumulator, exact for piecewise-linear velocity.
#[derive(Clone, Copy)]
struct KernelSweep<T> {
    lambda: T,
    acc: V3<T>,
}

impl<T: Real> KernelSweep<T> {
    fn new(lambda: T, init: V3<T>) -> Self {
        Self { lambda, acc: init }
    }

    fn advance(&mut self, ds: T, v0: V3<T>, v1: V3<T>) -> V3<T> {
        if self.lambda <= T::zero() {
            self.acc = v1;
            return self.acc;
        }
        if ds > T::zero() {
            let du = ds / self.lambda;
            let decay = (-du).exp();
            // em = 1 - exp(-du) without cancellation for small du.
            let em = -(-du).exp_m1();
            let c1 = T::one() - em / du;
            let c0 = em - c1;
            self.acc = self.acc * decay + v0 * c0 + v1 * c1;
        }
        self.acc
    }
}

fn velocity_at<T: Real, D: Dispersion<T>>(disp: &D, traj: &Trajectory<T>, s: T) -> V3<T> {
    let n = traj.len();
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if traj.s[mid] <= s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ds = traj.s[hi] - traj.s[lo];
    let t = if ds > T::zero() {
        ((s - traj.s[lo]) / ds).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let va = disp.gradient(traj.points[lo]);
    let vb = disp.gradient(traj.points[hi]);
    va + (vb - va) * t
}

/// <v>_B(s_eval) on a stored trajectory with enough history before s_eval.
pub fn weighted_velocity_average<T: Real, D: Dispersion<T>>(
    disp: &D,
    traj: &Trajectory<T>,
    lambda: T,
    truncation: T,
    s_eval: T,
) -> Result<V3<T>, TransportError> {
    check_truncation(truncation)?;
    if lambda < T::zero() {
        return Err(TransportError::BadParams {
            reason: "lambda must be nonnegative".into(),
        });
    }
    if traj.len() < 2 {
        return Err(TransportError::InsufficientHistory {
            have: 0.0,
            need: kernel_memory(lambda, truncation).to_f64().unwrap_or(0.0),
        });
    }
    let s0 = traj.s[0];
    let send = *traj.s.last().expect("nonempty");
    let tol = (send - s0).abs() * T::of(1e-9) + T::of(1e-12);
    if s_eval < s0 - tol || s_eval > send + tol {
        return Err(TransportError::OutsideSamples {
            s: s_eval.to_f64().unwrap_or(f64::NAN),
        });
    }
    let s_eval = s_eval.min(send).max(s0);
    if lambda <= T::zero() {
        return Ok(velocity_at(disp, traj, s_eval));
    }
    let need = kernel_memory(lambda, truncation);
    let have = s_eval - s0;
    if have + tol < need {
        return Err(TransportError::InsufficientHistory {
            have: have.to_f64().unwrap_or(0.0),
            need: need.to_f64().unwrap_or(0.0),
        });
    }
    let mut prev_v = disp.gradient(traj.points[0]);
    let mut prev_s = s0;
    let mut sweep = KernelSweep::new(lambda, prev_v);
    for j in 1..traj.len() {
        let sj = traj.s[j];
        let vj = disp.gradient(traj.points[j]);
        if sj >= s_eval {
            let ds = sj - prev_s;
            let t = if ds > T::zero() {
                (s_eval - prev_s) / ds
            } else {
                T::zero()
            };
            let v_end = prev_v + (vj - prev_v) * t;
            sweep.advance(s_eval - prev_s, prev_v, v_end);
            return Ok(sweep.acc);
        }
        sweep.advance(sj - prev_s, prev_v, vj);
        prev_s = sj;
        prev_v = vj;
    }
    Ok(sweep.acc)
}

/// Flat-window variant: the plain mean of v over [s_eval - lambda, s_eval].
pub fn windowed_velocity_average<T: Real, D: Dispersion<T>>(
    disp: &D,
    traj: &Trajectory<T>,
    lambda: T,
    s_eval: T,
) -> Result<V3<T>, TransportError> {
    if lambda <= T::zero() {
        return Err(TransportError::BadParams {
            reason: "window length must be positive".into(),
        });
    }
    if traj.len() < 2 {
        return Err(TransportError::InsufficientHistory {
            have: 0.0,
            need: lambda.to_f64().unwrap_or(0.0),
        });
    }
    let s0 = traj.s[0];
    let send = *traj.s.last().expect("nonempty");
    let tol = (send - s0).abs() * T::of(1e-9) + T::of(1e-12);
    if s_eval > send + tol {
        return Err(TransportError::OutsideSamples {
            s: s_eval.to_f64().unwrap_or(f64::NAN),
        });
    }
    let have = s_eval - s0;
    if have + tol < lambda {
        return Err(TransportError::InsufficientHistory {
            have: have.to_f64().unwrap_or(0.0),
            need: lambda.to_f64().unwrap_or(0.0),
        });
    }
    let a = s_eval - lambda;
    let b = s_eval.min(send);
    let mut acc = V3::zero();
    let mut prev_v = disp.gradient(traj.points[0]);
    let mut prev_s = s0;
    for j in 1..traj.len() {
        let sj = traj.s[j];
        let vj = disp.gradient(traj.points[j]);
        let ds = sj - prev_s;
        if sj > a && prev_s < b && ds > T::zero() {
            let lo = prev_s.max(a);
            let hi = sj.min(b);
            let tl = (lo - prev_s) / ds;
            let th = (hi - prev_s) / ds;
            let vl = prev_v + (vj - prev_v) * tl;
            let vh = prev_v + (vj - prev_v) * th;
            acc = acc + (vl + vh) * ((hi - lo) * T::half());
        }
        prev_s = sj;
        prev_v = vj;
        if prev_s >= b {
            break;
        }
    }
    Ok(acc * lambda.recip())
}

/// One period of velocity samples: phi[0] = 0, phi[last] = period, and the
/// closing entry duplicates the first so the interpolant is periodic.
struct PhaseTable<T> {
    phi: Vec<T>,
    v: Vec<V3<T>>,
    r: Vec<V2<T>>,
    period: T,
}

impl<T: Real> PhaseTable<T> {
    fn from_trajectory<D: Dispersion<T>>(
        disp: &D,
        slice: &PlaneSlice<T>,
        traj: &Trajectory<T>,
    ) -> Result<Self, TransportError> {
        let period = match traj.closure {
            ClosureTag::ClosedCompact { period } => period,
            ClosureTag::PeriodicOpen { period, .. } => period,
            ClosureTag::OpenUndetermined => return Err(TransportError::NotPeriodic),
        };
        if !(period > T::zero()) || traj.len() < 4 {
            return Err(TransportError::NotPeriodic);
        }
        let s0 = traj.s[0];
        let cut = period * (T::one() - T::of(1e-9));
        let mut phi = Vec::new();
        let mut v = Vec::new();
        let mut r = Vec::new();
        for j in 0..traj.len() {
            let f = traj.s[j] - s0;
            if f >= cut {
                break;
            }
            phi.push(f);
            v.push(disp.gradient(traj.points[j]));
            r.push(slice.planar(traj.points[j]));
        }
        if phi.len() < 3 {
            return Err(TransportError::NotPeriodic);
        }
        phi.push(period);
        v.push(v[0]);
        r.push(r[0]);
        Ok(Self { phi, v, r, period })
    }

    /// Distinct samples (the closing duplicate excluded).
    fn len(&self) -> usize {
        self.phi.len() - 1
    }

    fn v_at(&self, phase: T) -> V3<T> {
        let mut lo = 0usize;
        let mut hi = self.phi.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.phi[mid] <= phase {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let d = self.phi[hi] - self.phi[lo];
        let t = if d > T::zero() {
            ((phase - self.phi[lo]) / d).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        self.v[lo] + (self.v[hi] - self.v[lo]) * t
    }

}

/// Kernel average on a periodic orbit: the geometric resummation of the
/// exponential kernel over all past windings.
pub fn closed_orbit_average<T: Real, D: Dispersion<T>>(
    disp: &D,
    traj: &Trajectory<T>,
    lambda: T,
    s_eval: T,
) -> Result<V3<T>, TransportError> {
    // The planar coordinates are not needed for the average itself; any
    // slice through the samples works, so reuse the trajectory plane frame
    // implicitly by skipping it.
    let slice_free = PlaneSlice::new(
        FieldSetup::from_direction(V3::new(T::zero(), T::zero(), T::one())),
        T::zero(),
    );
    let table = PhaseTable::from_trajectory(disp, &slice_free, traj)?;
    if lambda < T::zero() {
        return Err(TransportError::BadParams {
            reason: "lambda must be nonnegative".into(),
        });
    }
    let s0 = traj.s[0];
    let f = s_eval - s0;
    let phase = f - (f / table.period).floor() * table.period;
    if lambda <= T::zero() {
        return Ok(table.v_at(phase));
    }
    // One rotated period ending at `phase`, swept from a zero start, then
    // divided by 1 - exp(-S/lambda).
    let mut sweep = KernelSweep::new(lambda, V3::zero());
    let mut prev_off = T::zero();
    let mut prev_v = table.v_at(phase);
    let m = table.len();
    // Walk samples with phi > phase first, then wrap.
    for j in 0..m {
        let raw = table.phi[j];
        if raw <= phase {
            continue;
        }
        let off = raw - phase;
        sweep.advance(off - prev_off, prev_v, table.v[j]);
        prev_off = off;
        prev_v = table.v[j];
    }
    for j in 0..m {
        let raw = table.phi[j];
        if raw > phase {
            break;
        }
        let off = raw + table.period - phase;
        sweep.advance(off - prev_off, prev_v, table.v[j]);
        prev_off = off;
        prev_v = table.v[j];
    }
    let end_v = table.v_at(phase);
    sweep.advance(table.period - prev_off, prev_v, end_v);
    let denom = -(-table.period / lambda).exp_m1();
    Ok(sweep.acc * denom.recip())
}

/// Liang-Barsky parameter interval of the segment part inside the window.
fn inside_interval<T: Real>(w: &Window<T>, a: V2<T>, b: V2<T>) -> Option<(T, T)> {
    let d = b - a;
    let mut tl = T::zero();
    let mut th = T::one();
    let checks = [
        (-d.x, a.x - w.u0),
        (d.x, w.u1 - a.x),
        (-d.y, a.y - w.v0),
        (d.y, w.v1 - a.y),
    ];
    for (p, q) in checks {
        if p.abs() <= T::zero() {
            if q < T::zero() {
                return None;
            }
        } else {
            let r = q / p;
            if p < T::zero() {
                tl = tl.max(r);
            } else {
                th = th.min(r);
            }
        }
    }
    (tl <= th).then_some((tl, th))
}

/// Trapezoid weights of the inside part of one segment, exact for a linear
/// integrand. `t` splits at the border crossing.
fn entry_weights<T: Real>(ds: T, t: T) -> (T, T) {
    let u = T::one() - t;
    (ds * u * u * T::half(), ds * u * (T::one() + t) * T::half())
}

fn exit_weights<T: Real>(ds: T, t: T) -> (T, T) {
    (
        ds * t * (T::two() - t) * T::half(),
        ds * t * t * T::half(),
    )
}

/// In-window samples of one committed branch run, used for the
/// close-approach statistics.
#[derive(Clone, Debug)]
struct CurveSamples<T> {
    r: Vec<V2<T>>,
    arc: Vec<T>,
    span_s: T,
}

enum BranchKind<T> {
    Periodic {
        table: PhaseTable<T>,
        /// Per-sample sigma weights over the run containing the seed.
        weights: Vec<T>,
        curve: CurveSamples<T>,
    },
    Streamed {
        far: V3<T>,
        s_far: T,
    },
}

struct Branch<T> {
    slice_idx: usize,
    h: T,
    kind: BranchKind<T>,
}

#[derive(Clone, Copy)]
struct Accumulator<T> {
    sigma: M33<T>,
    sym: M33<T>,
}

impl<T: Real> Accumulator<T> {
    fn zero() -> Self {
        Self {
            sigma: M33::zero(),
            sym: M33::zero(),
        }
    }

    fn knot(&mut self, w: T, v: V3<T>, a: V3<T>) {
        if w <= T::zero() {
            return;
        }
        self.sigma = self.sigma.add(&M33::outer(v, a).scale(w));
        self.sym = self.sym.add(&M33::outer(a, a).scale(w));
    }

    fn merge(&mut self, o: &Self) {
        self.sigma = self.sigma.add(&o.sigma);
        self.sym = self.sym.add(&o.sym);
    }
}

/// Sigma weights of the in-window run containing the seed on the unrolled
/// orbit. Velocity and kernel are phase-periodic but the in-window test is
/// not: winding k sits at r_j + k*shift2. Weights are keyed by phase sample
/// (length m); the closing duplicate folds onto phase 0. Returns None when
/// the seed itself falls outside the window.
fn periodic_run_weights<T: Real>(
    table: &PhaseTable<T>,
    shift2: V2<T>,
    window: &Window<T>,
    cell_scale: T,
) -> Option<(Vec<T>, CurveSamples<T>)> {
    let m = table.len() as i64;
    let split = |q: i64| -> (i64, usize) {
        let k = q.div_euclid(m);
        (k, (q - k * m) as usize)
    };
    let pos = |q: i64| -> V2<T> {
        let (k, j) = split(q);
        table.r[j] + shift2 * T::of(k as f64)
    };
    let sg = |q: i64| -> T {
        let (k, j) = split(q);
        table.period * T::of(k as f64) + table.phi[j]
    };
    let inside = |q: i64| window.contains(pos(q));
    if !inside(0) {
        return None;
    }
    let mut w = vec![T::zero(); m as usize];
    let drifting = shift2.norm() > T::of(1e-9) * cell_scale;
    if !drifting && (0..m).all(|q| inside(q)) {
        // In-plane compact orbit fully inside: one full period.
        for j in 0..m as usize {
            let ds = table.phi[j + 1] - table.phi[j];
            w[j] += ds * T::half();
            w[(j + 1) % m as usize] += ds * T::half();
        }
        let mut curve = CurveSamples {
            r: Vec::with_capacity(m as usize),
            arc: Vec::with_capacity(m as usize),
            span_s: table.period,
        };
        let mut arc = T::zero();
        for j in 0..m as usize {
            if j > 0 {
                arc += (table.r[j] - table.r[j - 1]).norm();
            }
            curve.r.push(table.r[j]);
            curve.arc.push(arc);
        }
        return Some((w, curve));
    }
    // Windowed run: expand from the seed until both ends leave the window.
    // The winding cap covers how many shifted copies can cross the window.
    let windings = if drifting {
        let diag = (window.width().powi(2) + window.height().powi(2)).sqrt();
        ((diag / shift2.norm()).to_f64().unwrap_or(1.0).ceil() as i64 + 2).min(128)
    } else {
        1
    };
    let bound = m * windings + m;
    let mut a = 0i64;
    while a > -bound && inside(a - 1) {
        a -= 1;
    }
    let mut b = 0i64;
    while b < bound && inside(b + 1) {
        b += 1;
    }
    for q in a..b {
        let ds = sg(q + 1) - sg(q);
        w[split(q).1] += ds * T::half();
        w[split(q + 1).1] += ds * T::half();
    }
    let ds_in = sg(a) - sg(a - 1);
    if let Some((tl, _)) = inside_interval(window, pos(a - 1), pos(a)) {
        let (wa, wb) = entry_weights(ds_in, tl);
        w[split(a - 1).1] += wa;
        w[split(a).1] += wb;
    }
    let ds_out = sg(b + 1) - sg(b);
    if let Some((_, th)) = inside_interval(window, pos(b), pos(b + 1)) {
        let (wa, wb) = exit_weights(ds_out, th);
        w[split(b).1] += wa;
        w[split(b + 1).1] += wb;
    }
    let mut curve = CurveSamples {
        r: Vec::new(),
        arc: Vec::new(),
        span_s: sg(b) - sg(a),
    };
    let mut arc = T::zero();
    let mut prev: Option<V2<T>> = None;
    for q in a..=b {
        let p = pos(q);
        if let Some(pr) = prev {
            arc += (p - pr).norm();
        }
        curve.r.push(p);
        curve.arc.push(arc);
        prev = Some(p);
    }
    Some((w, curve))
}

/// Two-pass resummation sweep over one period, accumulating the weighted
/// quadrature knots. Weights are per distinct phase sample; the kernel at
/// phase 0 equals the kernel at the period by the resummation fixed point.
fn sweep_periodic<T: Real>(
    table: &PhaseTable<T>,
    weights: &[T],
    lambdas: &[T],
    accs: &mut [Accumulator<T>],
) {
    let m = table.len();
    for (li, &lambda) in lambdas.iter().enumerate() {
        if lambda <= T::zero() {
            for j in 0..m {
                accs[li].knot(weights[j], table.v[j], table.v[j]);
            }
            continue;
        }
        let mut raw = KernelSweep::new(lambda, V3::zero());
        for j in 1..=m {
            raw.advance(table.phi[j] - table.phi[j - 1], table.v[j - 1], table.v[j]);
        }
        let denom = -(-table.period / lambda).exp_m1();
        let a0 = raw.acc * denom.recip();
        let mut sweep = KernelSweep::new(lambda, a0);
        accs[li].knot(weights[0], table.v[0], a0);
        for j in 1..m {
            let a = sweep.advance(table.phi[j] - table.phi[j - 1], table.v[j - 1], table.v[j]);
            accs[li].knot(weights[j], table.v[j], a);
        }
    }
}

/// Chunked backward walk; returns the far point and the span actually
/// covered. Only the endpoint is kept, so the memory stays flat.
fn walk_back<T: Real, D: Dispersion<T>>(
    tracer: &Tracer<'_, T, D>,
    seed: V3<T>,
    span: T,
    chunk: T,
) -> (V3<T>, T) {
    let mut pos = seed;
    let mut done = T::zero();
    while done < span {
        let c = (span - done).min(chunk);
        match tracer.trace_backward(pos, c) {
            Ok(b) if b.len() >= 2 => {
                let got = -b.s[0];
                pos = b.points[0];
                done += got;
                if b.stop != StopReason::Budget || got <= c * T::of(1e-6) {
                    break;
                }
            }
            _ => break,
        }
    }
    (pos, done)
}

/// Streams an open branch forward from its far history point, advancing one
/// kernel per lambda and committing the contiguous in-window run that
/// contains the seed (global s = 0). Returns the committed curve when the
/// run closed normally; `truncated` is bumped when the budget cut it.
#[allow(clippy::too_many_arguments)]
fn sweep_streamed<T: Real, D: Dispersion<T>>(
    tracer: &Tracer<'_, T, D>,
    window: &Window<T>,
    far: V3<T>,
    s_far: T,
    chunk: T,
    max_forward: T,
    lambdas: &[T],
    accs: &mut [Accumulator<T>],
    truncated: &mut usize,
) -> Option<CurveSamples<T>> {
    struct Run<T> {
        sig: Vec<Accumulator<T>>,
        s_in: T,
        r: Vec<V2<T>>,
        arc: Vec<T>,
    }
    let nl = lambdas.len();
    let v_far = tracer.disp.gradient(far);
    let mut sweeps: Vec<KernelSweep<T>> = lambdas
        .iter()
        .map(|&l| KernelSweep::new(l, v_far))
        .collect();
    let mut cur_a: Vec<V3<T>> = vec![v_far; nl];
    let mut prev_a: Vec<V3<T>> = vec![v_far; nl];
    let mut run: Option<Run<T>> = None;
    let mut pos = far;
    let mut s_base = s_far;
    let mut prev_s = s_far;
    let mut prev_v = v_far;
    let mut prev_r = tracer.slice.planar(far);
    let mut prev_inside = window.contains(prev_r);
    if prev_inside {
        run = Some(Run {
            sig: vec![Accumulator::zero(); nl],
            s_in: s_far,
            r: vec![prev_r],
            arc: vec![T::zero()],
        });
    }
    let s_tol = T::of(1e-9) * (T::one() + s_far.abs());
    loop {
        let traj = match tracer.trace(pos, chunk) {
            Ok(t) => t,
            Err(_) => break,
        };
        for j in 1..traj.len() {
            let s_g = s_base + traj.s[j];
            let ds = s_g - prev_s;
            let p = traj.points[j];
            let r2 = tracer.slice.planar(p);
            let v = tracer.disp.gradient(p);
            for (li, sw) in sweeps.iter_mut().enumerate() {
                cur_a[li] = sw.advance(ds, prev_v, v);
            }
            let inside = window.contains(r2);
            match (prev_inside, inside, run.as_mut()) {
                (true, true, Some(rn)) => {
                    for li in 0..nl {
                        rn.sig[li].knot(ds * T::half(), prev_v, prev_a[li]);
                        rn.sig[li].knot(ds * T::half(), v, cur_a[li]);
                    }
                    let arc_prev = *rn.arc.last().expect("run nonempty");
                    rn.arc.push(arc_prev + (r2 - prev_r).norm());
                    rn.r.push(r2);
                }
                (false, true, _) => {
                    let t = inside_interval(window, prev_r, r2)
                        .map(|(tl, _)| tl)
                        .unwrap_or(T::zero());
                    let mut rn = Run {
                        sig: vec![Accumulator::zero(); nl],
                        s_in: prev_s + ds * t,
                        r: vec![r2],
                        arc: vec![T::zero()],
                    };
                    let (wa, wb) = entry_weights(ds, t);
                    for li in 0..nl {
                        rn.sig[li].knot(wa, prev_v, prev_a[li]);
                        rn.sig[li].knot(wb, v, cur_a[li]);
                    }
                    run = Some(rn);
                }
                (true, false, Some(_)) => {
                    let t = inside_interval(window, prev_r, r2)
                        .map(|(_, th)| th)
                        .unwrap_or(T::one());
                    let mut rn = run.take().expect("active run");
                    let (wa, wb) = exit_weights(ds, t);
                    for li in 0..nl {
                        rn.sig[li].knot(wa, prev_v, prev_a[li]);
                        rn.sig[li].knot(wb, v, cur_a[li]);
                    }
                    let s_out = prev_s + ds * t;
                    if rn.s_in <= s_tol && s_out >= -s_tol {
                        for li in 0..nl {
                            accs[li].merge(&rn.sig[li]);
                        }
                        return Some(CurveSamples {
                            r: rn.r,
                            arc: rn.arc,
                            span_s: s_out - rn.s_in,
                        });
                    }
                }
                _ => {}
            }
            std::mem::swap(&mut prev_a, &mut cur_a);
            prev_s = s_g;
            prev_v = v;
            prev_r = r2;
            prev_inside = inside;
        }
        let ended = traj.closure.is_periodic() || traj.stop != StopReason::Budget;
        s_base = prev_s;
        pos = *traj.points.last().expect("nonempty trace");
        if ended || s_base - s_far >= max_forward {
            break;
        }
        // Past the seed with no active run: the seed landed on the border
        // and its run was never opened; nothing to commit.
        if run.is_none() && s_base > chunk {
            break;
        }
    }
    // Budget or a stop cut the run; commit it when it covers the seed.
    if let Some(rn) = run {
        if rn.s_in <= s_tol && prev_s >= -s_tol {
            for li in 0..lambdas.len() {
                accs[li].merge(&rn.sig[li]);
            }
            *truncated += 1;
            return Some(CurveSamples {
                r: rn.r,
                arc: rn.arc,
                span_s: prev_s - rn.s_in,
            });
        }
    }
    *truncated += 1;
    None
}

fn exit_index<T: Real>(
    traj: &Trajectory<T>,
    slice: &PlaneSlice<T>,
    window: &Window<T>,
    from: usize,
) -> Option<usize> {
    (from.max(1)..traj.len()).find(|&j| !window.contains(slice.planar(traj.points[j])))
}

/// Finds every branch of the Fermi contour on the stratified slices: seeds
/// from marching squares on the cell window, classifies each as periodic or
/// streamed-open, and precomputes what the sweeps need.
fn discover_branches<T: Real, D: Dispersion<T>>(
    disp: &D,
    lattice: &ReciprocalLattice<T>,
    setup: FieldSetup<T>,
    fermi: T,
    hist: T,
    sampling: &SliceSampling<T>,
) -> Result<(Vec<Branch<T>>, Window<T>), TransportError> {
    let b = setup.b_hat;
    let basis = lattice.basis();
    let d_b = basis
        .iter()
        .map(|a| a.dot(b).abs())
        .fold(T::zero(), T::max);
    if !(d_b > T::zero()) {
        return Err(TransportError::BadParams {
            reason: "degenerate lattice projection along b".into(),
        });
    }
    let span = T::of(sampling.span_cells.max(1) as f64) * d_b;
    let half = lattice.cell_scale() * sampling.window_cells * T::half();
    let window = Window::centered(half, half);
    let n = sampling.n_slices.max(1);
    let mut branches = Vec::new();
    for i in 0..n {
        let u = if sampling.jitter {
            T::of(rng::derive(sampling.seed, "slice-offset", i as u64).gen::<f64>())
        } else {
            T::half()
        };
        let h = span * ((T::of(i as f64) + u) / T::of(n as f64) - T::half());
        let slice = PlaneSlice::new(setup, h);
        let g = |r: V2<T>| disp.energy(slice.lift(r)) - fermi;
        let pieces = match contour_lines(g, window, sampling.grid_n, T::zero()) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let tracer = Tracer::new(disp, slice, fermi, Some(lattice), sampling.ctrl);
        for piece in &pieces {
            if piece.points.is_empty() {
                continue;
            }
            let seed2 = piece.points[piece.points.len() / 2];
            let seed = match tracer.project_seed(slice.lift(seed2)) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let mut disc = match tracer.trace(seed, sampling.s_chunk) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let mut exit = exit_index(&disc, &slice, &window, 1);
            let mut k = 1usize;
            while exit.is_none()
                && !disc.closure.is_periodic()
                && disc.stop == StopReason::Budget
                && k < sampling.max_chunks
            {
                let from = disc.len();
                if tracer.extend(&mut disc, sampling.s_chunk).is_err() {
                    break;
                }
                exit = exit_index(&disc, &slice, &window, from.saturating_sub(1));
                k += 1;
            }
            if disc.closure.is_periodic() {
                if sampling.carriers == CarrierFilter::OpenOnly
                    && matches!(disc.closure, ClosureTag::ClosedCompact { .. })
                {
                    continue;
                }
                let table = match PhaseTable::from_trajectory(disp, &slice, &disc) {
                    Ok(t) => t,
                    Err(_) => continue,
                };
                let shift2 = match disc.closure {
                    ClosureTag::PeriodicOpen { shift, .. } => {
                        setup.planar(lattice.integer_vector(shift))
                    }
                    _ => V2::zero(),
                };
                let Some((weights, curve)) =
                    periodic_run_weights(&table, shift2, &window, lattice.cell_scale())
                else {
                    continue;
                };
                branches.push(Branch {
                    slice_idx: i,
                    h,
                    kind: BranchKind::Periodic {
                        weights,
                        curve,
                        table,
                    },
                });
            } else {
                // Seed's history must also cover the stretch from the
                // window entry back, so walk one chunk deeper.
                let (far, got) = walk_back(&tracer, seed, hist + sampling.s_chunk, T::of(512.0));
                branches.push(Branch {
                    slice_idx: i,
                    h,
                    kind: BranchKind::Streamed { far, s_far: -got },
                });
            }
        }
    }
    if branches.is_empty() {
        return Err(TransportError::EmptySurface);
    }
    Ok((branches, window))
}

/// Runs the quadrature sweeps for one lambda list over discovered branches.
/// Returns per-lambda raw accumulators (density-normalized), the committed
/// in-window curves grouped by slice, and the truncated-run count.
fn sweep_branches<T: Real, D: Dispersion<T>>(
    disp: &D,
    lattice: &ReciprocalLattice<T>,
    setup: FieldSetup<T>,
    fermi: T,
    branches: &[Branch<T>],
    window: &Window<T>,
    lambdas: &[T],
    sampling: &SliceSampling<T>,
) -> (Vec<Accumulator<T>>, Vec<Vec<CurveSamples<T>>>, usize) {
    let mut accs = vec![Accumulator::zero(); lambdas.len()];
    let mut curves: Vec<Vec<CurveSamples<T>>> = vec![Vec::new(); sampling.n_slices.max(1)];
    let mut truncated = 0usize;
    for br in branches {
        match &br.kind {
            BranchKind::Periodic {
                table,
                weights,
                curve,
            } => {
                sweep_periodic(table, weights, lambdas, &mut accs);
                if !curve.r.is_empty() {
                    curves[br.slice_idx].push(curve.clone());
                }
            }
            BranchKind::Streamed { far, s_far } => {
                let slice = PlaneSlice::new(setup, br.h);
                let tracer = Tracer::new(disp, slice, fermi, Some(lattice), sampling.ctrl);
                let budget =
                    s_far.abs() + sampling.s_chunk * T::of(sampling.max_chunks.max(1) as f64);
                if let Some(curve) = sweep_streamed(
                    &tracer,
                    window,
                    *far,
                    *s_far,
                    sampling.s_chunk,
                    budget,
                    lambdas,
                    &mut accs,
                    &mut truncated,
                ) {
                    curves[br.slice_idx].push(curve);
                }
            }
        }
    }
    // Density per sampled phase-space volume: the slice measure dh spreads
    // span/n per slice and the window covers a fixed in-plane area.
    let area = window.width() * window.height();
    let norm = (T::of(sampling.n_slices.max(1) as f64) * area).recip();
    for acc in &mut accs {
        acc.sigma = acc.sigma.scale(norm);
        acc.sym = acc.sym.scale(norm);
    }
    (accs, curves, truncated)
}

fn raw_curve<T: Real, D: Dispersion<T>>(
    disp: &D,
    lattice: &ReciprocalLattice<T>,
    setup: FieldSetup<T>,
    fermi: T,
    lambdas: &[T],
    truncation: T,
    sampling: &SliceSampling<T>,
) -> Result<(Vec<Accumulator<T>>, Vec<Vec<CurveSamples<T>>>, usize), TransportError> {
    let lam_max = lambdas.iter().fold(T::zero(), |a, &l| a.max(l));
    let hist = kernel_memory(lam_max, truncation);
    let (branches, window) = discover_branches(disp, lattice, setup, fermi, hist, sampling)?;
    Ok(sweep_branches(
        disp, lattice, setup, fermi, &branches, &window, lambdas, sampling,
    ))
}

/// Calibration constant making the free-electron band isotropic with unit
/// diagonal at lambda = 0, computed with the caller's quadrature settings.
fn drude_calibration<T: Real>(
    setup: FieldSetup<T>,
    truncation: T,
    sampling: &SliceSampling<T>,
) -> Result<T, TransportError> {
    let direct = DirectLattice::cubic();
    let lattice = reciprocal_from_direct(&direct).expect("cubic lattice");
    let mut cal = sampling.clone();
    // The sphere of radius 1 sits inside one cell, so one cell of slices
    // covers it; midpoints keep the constant deterministic. Its orbits are
    // compact, so closure detection stays at the defaults even when the
    // caller disabled it.
    cal.span_cells = 1;
    cal.jitter = false;
    cal.carriers = CarrierFilter::All;
    let defaults = StepControl::default();
    cal.ctrl.closure_tol = defaults.closure_tol;
    cal.ctrl.closure_angle = defaults.closure_angle;
    let (accs, _, _) = raw_curve(
        &SphericalBand,
        &lattice,
        setup,
        T::half(),
        &[T::zero()],
        truncation,
        &cal,
    )?;
    let tr = accs[0].sigma.m[0][0] + accs[0].sigma.m[1][1] + accs[0].sigma.m[2][2];
    if !(tr > T::zero()) {
        return Err(TransportError::EmptySurface);
    }
    Ok(T::of(3.0) / tr)
}

/// Conductivity tensors over the requested lambda grid.
pub fn conductivity_curve<T: Real, D: Dispersion<T>>(
    disp: &D,
    lattice: &ReciprocalLattice<T>,
    setup: FieldSetup<T>,
    fermi: T,
    params: &TransportParams<T>,
    sampling: &SliceSampling<T>,
) -> Result<ConductivityCurve<T>, TransportError> {
    check_truncation(params.truncation)?;
    if params.lambdas.is_empty() {
        return Err(TransportError::BadParams {
            reason: "no lambda values requested".into(),
        });
    }
    for w in params.lambdas.windows(2) {
        if !(w[1] > w[0]) {
            return Err(TransportError::BadParams {
                reason: "lambdas must increase strictly".into(),
            });
        }
    }
    if params.lambdas[0] < T::zero() {
        return Err(TransportError::BadParams {
            reason: "lambda must be nonnegative".into(),
        });
    }
    if let Some(bd) = &params.breakdown {
        if !(bd.kappa > T::zero()) {
            return Err(TransportError::BadParams {
                reason: "breakdown kappa must be positive".into(),
            });
        }
    }
    let cal = drude_calibration(setup, params.truncation, sampling)?;
    let (accs, curves, mut truncated) = raw_curve(
        disp,
        lattice,
        setup,
        fermi,
        &params.lambdas,
        params.truncation,
        sampling,
    )?;
    let samples = match &params.breakdown {
        None => params
            .lambdas
            .iter()
            .zip(&accs)
            .map(|(&l, acc)| ConductivityTensor {
                lambda: l,
                lambda_eff: l,
                sigma: acc.sigma.scale(cal),
                sym_quadrature: acc.sym.scale(cal),
            })
            .collect(),
        Some(bd) => {
            // The merged relaxation rate shortens the kernel memory and the
            // sigma0 unit loses the same factor of tau.
            let lam_eff: Vec<T> = params
                .lambdas
                .iter()
                .map(|&l| {
                    if l <= T::zero() {
                        return l;
                    }
                    let dp = bd.kappa / l.sqrt();
                    match pooled_lambda1(&curves, dp) {
                        Some(l1) => effective_lambda(l, l1),
                        None => l,
                    }
                })
                .collect();
            let hist = kernel_memory(
                lam_eff.iter().fold(T::zero(), |a, &l| a.max(l)),
                params.truncation,
            );
            let (branches, window) =
                discover_branches(disp, lattice, setup, fermi, hist, sampling)?;
            let (accs2, _, t2) = sweep_branches(
                disp, lattice, setup, fermi, &branches, &window, &lam_eff, sampling,
            );
            truncated += t2;
            params
                .lambdas
                .iter()
                .zip(lam_eff.iter().zip(&accs2))
                .map(|(&l, (&le, acc))| {
                    let unit = if l > T::zero() { le / l } else { T::one() };
                    ConductivityTensor {
                        lambda: l,
                        lambda_eff: le,
                        sigma: acc.sigma.scale(cal * unit),
                        sym_quadrature: acc.sym.scale(cal * unit),
                    }
                })
                .collect()
        }
    };
    Ok(ConductivityCurve {
        samples,
        truncated_runs: truncated,
    })
}

/// Single-lambda convenience wrapper.
pub fn conductivity_tensor<T: Real, D: Dispersion<T>>(
    disp: &D,
    lattice: &ReciprocalLattice<T>,
    setup: FieldSetup<T>,
    fermi: T,
    lambda: T,
    params: &TransportParams<T>,
    sampling: &SliceSampling<T>,
) -> Result<ConductivityTensor<T>, TransportError> {
    let one = TransportParams {
        lambdas: vec![lambda],
        truncation: params.truncation,
        breakdown: params.breakdown.clone(),
    };
    let curve = conductivity_curve(disp, lattice, setup, fermi, &one, sampling)?;
    Ok(curve.samples.into_iter().next().expect("one sample"))
}

/// Envelope and least-squares log-log slopes of |values| over the window.
#[derive(Clone, Copy, Debug)]
pub struct SlopeFit<T> {
    /// (slope, rms residual in log10 units) of the upper-envelope fit.
    pub envelope: (T, T),
    /// Same for the ordinary least-squares fit.
    pub least_squares: (T, T),
}

pub fn asymptotic_slope<T: Real>(
    lambdas: &[T],
    values: &[T],
    window: (T, T),
) -> Result<SlopeFit<T>, TransportError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&l, &v) in lambdas.iter().zip(values) {
        if l < window.0 || l > window.1 {
            continue;
        }
        let mag = v.abs();
        if !(l > T::zero()) || !(mag > T::of(1e-300)) {
            return Err(TransportError::BadFit {
                reason: "nonpositive lambda or vanishing component in the window".into(),
            });
        }
        xs.push(l.log10());
        ys.push(mag.log10());
    }
    if xs.len() < 8 {
        return Err(TransportError::BadFit {
            reason: format!("{} samples in the window, need 8", xs.len()),
        });
    }
    let span = xs.iter().fold(T::neg_infinity(), |a, &x| a.max(x))
        - xs.iter().fold(T::infinity(), |a, &x| a.min(x));
    if span < T::two() - T::of(1e-9) {
        return Err(TransportError::BadFit {
            reason: "window narrower than two decades".into(),
        });
    }
    let fit = |ixs: &[T], iys: &[T]| -> Option<(T, T, T)> {
        let (slope, icept) = ols(ixs, iys)?;
        let mut rss = T::zero();
        for (&x, &y) in ixs.iter().zip(iys) {
            rss += (y - slope * x - icept).powi(2);
        }
        Some((slope, icept, (rss / T::of(ixs.len() as f64)).sqrt()))
    };
    let (ls_slope, mut icept, ls_res) = fit(&xs, &ys).ok_or(TransportError::BadFit {
        reason: "degenerate abscissae".into(),
    })?;
    let mut env = (ls_slope, ls_res);
    let mut slope = ls_slope;
    for _ in 0..3 {
        let mut kx = Vec::new();
        let mut ky = Vec::new();
        for (&x, &y) in xs.iter().zip(&ys) {
            if y >= slope * x + icept - T::of(1e-12) {
                kx.push(x);
                ky.push(y);
            }
        }
        if kx.len() < 3 {
            break;
        }
        match fit(&kx, &ky) {
            Some((s2, i2, r2)) => {
                slope = s2;
                icept = i2;
                env = (s2, r2);
            }
            None => break,
        }
    }
    Ok(SlopeFit {
        envelope: env,
        least_squares: (ls_slope, ls_res),
    })
}

/// Samples within delta_p of a non-adjacent piece of the same or another
/// curve count as close-approach events; the trivial neighborhood within
/// arc distance 5*delta_p along the same curve is excluded.
fn count_close_samples<T: Real>(
    pts: &[(usize, V2<T>, T)],
    delta_p: T,
) -> usize {
    let cell = delta_p;
    let key = |p: V2<T>| -> (i64, i64) {
        (
            (p.x / cell).floor().to_f64().unwrap_or(0.0) as i64,
            (p.y / cell).floor().to_f64().unwrap_or(0.0) as i64,
        )
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &(_, p, _)) in pts.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let guard = delta_p * T::of(5.0);
    let mut events = 0usize;
    for (i, &(ci, pi, ai)) in pts.iter().enumerate() {
        let (ku, kv) = key(pi);
        let mut close = false;
        'scan: for du in -1..=1 {
            for dv in -1..=1 {
                if let Some(bucket) = grid.get(&(ku + du, kv + dv)) {
                    for &j in bucket {
                        if j == i {
                            continue;
                        }
                        let (cj, pj, aj) = pts[j];
                        if ci == cj && (ai - aj).abs() <= guard {
                            continue;
                        }
                        if (pi - pj).norm() < delta_p {
                            close = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if close {
            events += 1;
        }
    }
    events
}

/// Mean arc length between close-approach events over a family of curves
/// in one plane. Dense approaches drive it down to the sampling step.
pub fn close_approach_length<T: Real>(
    traces: &[PlanarTrace<T>],
    delta_p: T,
) -> Result<T, TransportError> {
    if !(delta_p > T::zero()) {
        return Err(TransportError::BadParams {
            reason: "delta_p must be positive".into(),
        });
    }
    let mut pts = Vec::new();
    let mut total = T::zero();
    for (ci, tr) in traces.iter().enumerate() {
        for (p, a) in tr.pts.iter().zip(&tr.arcs) {
            pts.push((ci, *p, *a));
        }
        total += tr.total_arc();
    }
    let events = count_close_samples(&pts, delta_p);
    if events == 0 {
        return Err(TransportError::NoCloseApproaches);
    }
    Ok(total / T::of(events as f64))
}

/// Merged relaxation rate: 1/L_eff = 1/L + 1/L1.
pub fn effective_lambda<T: Real>(lambda: T, lambda1: T) -> T {
    if !(lambda1 > T::zero()) {
        return lambda;
    }
    (lambda.recip() + lambda1.recip()).recip()
}

/// Breakdown-corrected kernel scale for one trajectory: delta_p shrinks as
/// kappa/sqrt(lambda), the close-approach length maps to the s-parameter
/// through the trajectory's own ds/darc, and the rates add.
pub fn effective_tau<T: Real>(
    traj: &Trajectory<T>,
    slice: &PlaneSlice<T>,
    lambda: T,
    kappa: T,
) -> Result<T, TransportError> {
    if !(lambda > T::zero()) || !(kappa > T::zero()) {
        return Err(TransportError::BadParams {
            reason: "lambda and kappa must be positive".into(),
        });
    }
    let dp = kappa / lambda.sqrt();
    let trace = PlanarTrace::from_trajectory(traj, slice);
    let l1_arc = close_approach_length(std::slice::from_ref(&trace), dp)?;
    let total_arc = traj.total_arc();
    if !(total_arc > T::zero()) {
        return Err(TransportError::NoCloseApproaches);
    }
    let l1 = l1_arc * traj.total_s() / total_arc;
    Ok(effective_lambda(lambda, l1))
}

fn pooled_lambda1<T: Real>(curves: &[Vec<CurveSamples<T>>], delta_p: T) -> Option<T> {
    let mut events = 0usize;
    let mut total_s = T::zero();
    for slice_curves in curves {
        if slice_curves.is_empty() {
            continue;
        }
        let mut pts = Vec::new();
        for (ci, c) in slice_curves.iter().enumerate() {
            total_s += c.span_s;
            // Arc and s differ by the local speed; the event statistics use
            // arcs for the exclusion rule and s for the rate.
            for (p, a) in c.r.iter().zip(&c.arc) {
                pts.push((ci, *p, *a));
            }
        }
        events += count_close_samples(&pts, delta_p);
    }
    if events == 0 {
        None
    } else {
        Some(total_s / T::of(events as f64))
    }
}

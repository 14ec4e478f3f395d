//! Orbit tracer: the magnetic flow dp/ds = grad(eps) x b_hat restricted to
//! one energy level and one field-orthogonal plane.
//!
//! An embedded Dormand-Prince 5(4) pair drives the step size; every accepted
//! step is pulled back onto the constraint set {eps = eps_F, p.b_hat = h} by
//! a two-parameter Newton projection. Saddle approaches (vanishing in-plane
//! gradient) either stop the trace or are hopped over by a deterministic
//! offset along the incoming direction, depending on policy.

use thiserror::Error;

use crate::dispersion::Dispersion;
use crate::field::PlaneSlice;
use crate::geom::V3;
use crate::lattice::ReciprocalLattice;
use crate::num::Real;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("seed does not project onto the orbit set: residual {residual:e}")]
    SeedOffSurface { residual: f64 },
}

/// Why the integration loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Requested s-span exhausted.
    Budget,
    /// Orbit returned to its start (possibly up to a lattice shift).
    Closure,
    /// In-plane gradient fell below `tol_sing` and the policy is `Stop`,
    /// or every restart offset failed.
    Saddle,
    /// Step size collapsed below `min_step` without acceptance.
    StepFailure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaddlePolicy {
    Stop,
    Restart,
}

/// Closure state of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClosureTag<T> {
    /// p(s + S) = p(s): a compact orbit.
    ClosedCompact { period: T },
    /// p(s + S) = p(s) + g with g a nonzero reciprocal-lattice vector.
    PeriodicOpen { period: T, shift: [i64; 3] },
    OpenUndetermined,
}

impl<T> ClosureTag<T> {
    pub fn is_periodic(&self) -> bool {
        !matches!(self, ClosureTag::OpenUndetermined)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepControl<T> {
    /// Local error budget per unit of s.
    pub step_tol: T,
    pub max_step: T,
    pub min_step: T,
    /// Absolute energy residual kept by the projection.
    pub tol_energy: T,
    /// Absolute plane residual kept by the projection.
    pub tol_plane: T,
    /// In-plane gradient magnitude that counts as a saddle approach.
    pub tol_sing: T,
    pub saddle: SaddlePolicy,
    pub max_restarts: usize,
    /// Spatial tolerance for closure detection.
    pub closure_tol: T,
    /// Angular tolerance for the tangent match at closure.
    pub closure_angle: T,
}

impl<T: Real> Default for StepControl<T> {
    fn default() -> Self {
        Self {
            step_tol: T::of(1e-10),
            max_step: T::of(0.5),
            min_step: T::of(1e-12),
            tol_energy: T::of(1e-9),
            tol_plane: T::of(1e-9),
            tol_sing: T::of(1e-7),
            saddle: SaddlePolicy::Restart,
            max_restarts: 100_000,
            closure_tol: T::of(1e-6),
            closure_angle: T::of(1e-6),
        }
    }
}

/// Sampled orbit. `s` is the flow parameter, `arc` the cumulative arc
/// length; both are strictly increasing over the samples.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub points: Vec<V3<T>>,
    pub s: Vec<T>,
    pub arc: Vec<T>,
    pub closure: ClosureTag<T>,
    pub stop: StopReason,
    /// Sample indices right after a saddle hop.
    pub restarts: Vec<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_arc(&self) -> T {
        *self.arc.last().unwrap_or(&T::zero())
    }

    pub fn total_s(&self) -> T {
        match (self.s.first(), self.s.last()) {
            (Some(a), Some(b)) => *b - *a,
            _ => T::zero(),
        }
    }

    /// In-plane coordinates of every sample.
    pub fn planar(&self, slice: &PlaneSlice<T>) -> Vec<crate::geom::V2<T>> {
        self.points.iter().map(|p| slice.planar(*p)).collect()
    }
}

pub struct Tracer<'a, T, D> {
    pub disp: &'a D,
    pub slice: PlaneSlice<T>,
    pub fermi: T,
    /// Needed to express closure shifts in integer coordinates; orbits on
    /// non-periodic bands leave it empty and only compact closure applies.
    pub lattice: Option<&'a ReciprocalLattice<T>>,
    pub ctrl: StepControl<T>,
}

/// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Clone, Copy)]
struct Deriv<T> {
    vel: V3<T>,
    speed: T,
}

impl<'a, T: Real, D: Dispersion<T>> Tracer<'a, T, D> {
    pub fn new(
        disp: &'a D,
        slice: PlaneSlice<T>,
        fermi: T,
        lattice: Option<&'a ReciprocalLattice<T>>,
        ctrl: StepControl<T>,
    ) -> Self {
        Self {
            disp,
            slice,
            fermi,
            lattice,
            ctrl,
        }
    }

    /// Group velocity grad(eps).
    #[inline]
    pub fn velocity(&self, p: V3<T>) -> V3<T> {
        self.disp.gradient(p)
    }

    /// Flow field grad(eps) x b_hat; its norm is the in-plane gradient.
    #[inline]
    pub fn flow(&self, p: V3<T>) -> V3<T> {
        self.disp.gradient(p).cross(self.slice.setup.b_hat)
    }

    #[inline]
    fn deriv(&self, p: V3<T>, sign: T) -> Deriv<T> {
        let vel = self.flow(p) * sign;
        Deriv {
            vel,
            speed: vel.norm(),
        }
    }

    /// Newton projection onto {eps = eps_F} and {p.b_hat = h}, moving along
    /// grad(eps) and b_hat. Returns the projected point on success.
    fn project(&self, start: V3<T>, iters: usize) -> Option<V3<T>> {
        let b = self.slice.setup.b_hat;
        let mut p = start;
        let cap = T::of(0.5);
        for _ in 0..iters {
            let re = self.disp.energy(p) - self.fermi;
            let rp = self.slice.residual(p);
            if re.abs() < self.ctrl.tol_energy * T::of(0.1)
                && rp.abs() < self.ctrl.tol_plane * T::of(0.1)
            {
                return Some(p);
            }
            let g = self.disp.gradient(p);
            let gg = g.norm2();
            let gb = g.dot(b);
            let det = gg - gb * gb;
            if det.abs() < T::of(1e-30) {
                return None;
            }
            // Solve [[gg, gb], [gb, 1]] (alpha, beta) = -(re, rp).
            let alpha = (-re + gb * rp) / det;
            let beta = (-rp * gg + gb * re) / det;
            let mut step = g * alpha + b * beta;
            let n = step.norm();
            if n > cap {
                step = step * (cap / n);
            }
            p += step;
        }
        let re = self.disp.energy(p) - self.fermi;
        let rp = self.slice.residual(p);
        if re.abs() < self.ctrl.tol_energy && rp.abs() < self.ctrl.tol_plane {
            Some(p)
        } else {
            None
        }
    }

    /// Projects a seed onto the orbit set; error if no nearby point exists.
    pub fn project_seed(&self, seed: V3<T>) -> Result<V3<T>, TraceError> {
        self.project(seed, 25).ok_or_else(|| {
            let residual = (self.disp.energy(seed) - self.fermi)
                .abs()
                .max(self.slice.residual(seed).abs());
            TraceError::SeedOffSurface {
                residual: residual.to_f64().unwrap_or(f64::NAN),
            }
        })
    }

    /// One embedded RK step from `p` with size `h`; returns the advanced
    /// point, the arc increment, and the local error estimate.
    fn rk_step(&self, p: V3<T>, h: T, sign: T) -> (V3<T>, T, T) {
        let mut k: [Deriv<T>; 7] = [self.deriv(p, sign); 7];
        for stage in 1..7 {
            let mut q = p;
            for (j, kj) in k.iter().enumerate().take(stage) {
                let a = T::of(DP_A[stage][j]);
                if a != T::zero() {
                    q += kj.vel * (a * h);
                }
            }
            let _ = DP_C; // stage times are implicit for an autonomous field
            k[stage] = self.deriv(q, sign);
        }
        let mut dp5 = V3::zero();
        let mut dl5 = T::zero();
        let mut dperr = V3::zero();
        let mut dlerr = T::zero();
        for (j, kj) in k.iter().enumerate() {
            let b5 = T::of(DP_B5[j]);
            let b4 = T::of(DP_B4[j]);
            dp5 += kj.vel * (b5 * h);
            dl5 += kj.speed * b5 * h;
            dperr += kj.vel * ((b5 - b4) * h);
            dlerr += kj.speed * (b5 - b4) * h;
        }
        let err = (dperr.norm2() + dlerr * dlerr).sqrt();
        (p + dp5, dl5, err)
    }

    /// Core loop; `sign = +1` follows the flow, `-1` reverses it.
    fn run(
        &self,
        seed: V3<T>,
        s_span: T,
        sign: T,
        detect: bool,
    ) -> Result<Trajectory<T>, TraceError> {
        let p0 = self.project_seed(seed)?;
        let v0 = self.deriv(p0, sign);
        let mut traj = Trajectory {
            points: vec![p0],
            s: vec![T::zero()],
            arc: vec![T::zero()],
            closure: ClosureTag::OpenUndetermined,
            stop: StopReason::Budget,
            restarts: Vec::new(),
        };
        let v0_dir = if v0.speed > T::zero() {
            v0.vel / v0.speed
        } else {
            V3::zero()
        };
        self.advance(&mut traj, s_span, sign, detect.then_some((p0, v0_dir)))?;
        Ok(traj)
    }

    fn advance(
        &self,
        traj: &mut Trajectory<T>,
        s_budget: T,
        sign: T,
        closure_ref: Option<(V3<T>, V3<T>)>,
    ) -> Result<(), TraceError> {
        let ctrl = &self.ctrl;
        let mut p = *traj.points.last().unwrap();
        let mut s = *traj.s.last().unwrap();
        let mut arc = *traj.arc.last().unwrap();
        let s_end = s + s_budget;
        let mut last_dir = {
            let d = self.deriv(p, sign);
            if d.speed > T::zero() {
                d.vel / d.speed
            } else {
                V3::zero()
            }
        };
        let mut h = ctrl.max_step.min(s_budget) * T::of(0.1);
        // Arm closure checks only after moving away from the start.
        let min_closure_arc = ctrl.closure_tol * T::of(100.0);

        while s < s_end {
            let d_here = self.deriv(p, sign);
            if d_here.speed < ctrl.tol_sing {
                match ctrl.saddle {
                    SaddlePolicy::Stop => {
                        traj.stop = StopReason::Saddle;
                        return Ok(());
                    }
                    SaddlePolicy::Restart => {
                        if traj.restarts.len() >= ctrl.max_restarts
                            || !self.hop_saddle(traj, &mut p, &mut s, &mut arc, last_dir, sign)
                        {
                            traj.stop = StopReason::Saddle;
                            return Ok(());
                        }
                        continue;
                    }
                }
            }

            h = h.min(s_end - s).min(ctrl.max_step);
            let (p_new, dl, err) = self.rk_step(p, h, sign);
            let tol = ctrl.step_tol * h;
            if err > tol {
                let shrink = T::of(0.9) * (tol / err).powf(T::of(0.2));
                h *= shrink.max(T::of(0.2));
                if h < ctrl.min_step {
                    traj.stop = StopReason::StepFailure;
                    return Ok(());
                }
                continue;
            }
            let Some(p_proj) = self.project(p_new, 3) else {
                h *= T::half();
                if h < ctrl.min_step {
                    traj.stop = StopReason::StepFailure;
                    return Ok(());
                }
                continue;
            };
            let prev = p;
            let h_step = h;
            p = p_proj;
            s += h_step;
            arc += dl;
            traj.points.push(p);
            traj.s.push(s);
            traj.arc.push(arc);
            let d_new = self.deriv(p, sign);
            if d_new.speed > T::zero() {
                last_dir = d_new.vel / d_new.speed;
            }
            // Step-size growth for the next attempt.
            if err > T::zero() {
                let grow = T::of(0.9) * (tol / err).powf(T::of(0.2));
                h *= grow.min(T::of(5.0)).max(T::of(0.5));
            } else {
                h *= T::of(5.0);
            }

            if let Some((p0, v0_dir)) = closure_ref {
                if arc > min_closure_arc && traj.points.len() > 8 {
                    if let Some((period, shift)) =
                        self.check_closure(prev, p, s - h_step, h_step, p0, v0_dir, sign)
                    {
                        traj.closure = if shift == [0, 0, 0] {
                            ClosureTag::ClosedCompact { period }
                        } else {
                            ClosureTag::PeriodicOpen { period, shift }
                        };
                        // Replace the overshooting sample with the refined
                        // closure point.
                        let target = p0 + self.shift_vector(shift);
                        let lp = *traj.points.last().unwrap();
                        let back = traj.points.len() - 2;
                        let dl_fix = (target - traj.points[back]).norm()
                            - (lp - traj.points[back]).norm();
                        *traj.points.last_mut().unwrap() = target;
                        *traj.s.last_mut().unwrap() = period;
                        let a = *traj.arc.last_mut().unwrap();
                        *traj.arc.last_mut().unwrap() = a + dl_fix;
                        traj.stop = StopReason::Closure;
                        return Ok(());
                    }
                }
            }
        }
        traj.stop = StopReason::Budget;
        Ok(())
    }

    fn shift_vector(&self, n: [i64; 3]) -> V3<T> {
        match self.lattice {
            Some(lat) => lat.integer_vector(n),
            None => V3::zero(),
        }
    }

    /// Tests whether the segment (prev -> cur) passes the closure target and
    /// refines the crossing with Newton on the transversal section.
    #[allow(clippy::too_many_arguments)]
    fn check_closure(
        &self,
        prev: V3<T>,
        cur: V3<T>,
        s_prev: T,
        h: T,
        p0: V3<T>,
        v0_dir: V3<T>,
        sign: T,
    ) -> Option<(T, [i64; 3])> {
        let ctrl = &self.ctrl;
        let mid = (prev + cur) * T::half() - p0;
        let (n, _) = match self.lattice {
            Some(lat) => lat.nearest_lattice_vector(mid),
            None => ([0i64; 3], mid),
        };
        let target = p0 + self.shift_vector(n);
        // Distance from the target to the segment.
        let ab = cur - prev;
        let len2 = ab.norm2();
        if len2 == T::zero() {
            return None;
        }
        let t = ((target - prev).dot(ab) / len2).max(T::zero()).min(T::one());
        let nearest = prev + ab * t;
        if (nearest - target).norm() > ctrl.closure_tol * T::of(50.0) {
            return None;
        }
        // Coarse direction gate.
        let d_cur = self.deriv(cur, sign);
        if d_cur.speed == T::zero() || d_cur.vel.dot(v0_dir) <= T::zero() {
            return None;
        }
        // Newton on g(ds) = (p(ds) - target) . v0_dir from the previous
        // sample; each evaluation is a single RK step plus projection.
        let mut ds = h * t;
        for _ in 0..8 {
            let (q_raw, _, _) = self.rk_step(prev, ds, sign);
            let q = self.project(q_raw, 3)?;
            let g = (q - target).dot(v0_dir);
            let dq = self.deriv(q, sign);
            let slope = dq.vel.dot(v0_dir);
            if slope.abs() < T::of(1e-30) {
                return None;
            }
            let step = g / slope;
            ds -= step;
            if ds < -h || ds > h * T::two() {
                return None;
            }
            if step.abs() < T::of(1e-14) * h.max(T::one()) {
                break;
            }
        }
        let (q_raw, _, _) = self.rk_step(prev, ds, sign);
        let q = self.project(q_raw, 3)?;
        let dq = self.deriv(q, sign);
        if dq.speed == T::zero() {
            return None;
        }
        let dir = dq.vel / dq.speed;
        let miss = (q - target).norm();
        let angle = dir.angle_to(v0_dir);
        if miss < ctrl.closure_tol && angle < ctrl.closure_angle {
            Some((s_prev + ds, n))
        } else {
            None
        }
    }

    /// Deterministic saddle hop. At a hyperbolic point the level set
    /// branches; the flow continues on the outgoing separatrix that keeps
    /// the higher-energy sector on its left (the limit of nearby regular
    /// orbits). Candidates are probed left-normal first in doubling
    /// multiples of 10*tol_sing and projected back onto the orbit set; the
    /// first projected point with clearly diverging flow wins.
    fn hop_saddle(
        &self,
        traj: &mut Trajectory<T>,
        p: &mut V3<T>,
        s: &mut T,
        arc: &mut T,
        last_dir: V3<T>,
        sign: T,
    ) -> bool {
        if last_dir.norm() == T::zero() {
            return false;
        }
        let t = last_dir;
        let nl = self.slice.setup.b_hat.cross(t);
        if nl.norm() == T::zero() {
            return false;
        }
        let nl = nl.normalized();
        let probes = [
            nl,
            (nl + t).normalized(),
            -nl,
            (t - nl).normalized(),
            t,
        ];
        let speed_here = self.deriv(*p, sign).speed;
        let base = self.ctrl.tol_sing * T::of(10.0);
        for k in 0..17 {
            let d = base * T::of(f64::powi(2.0, k));
            for dir in probes {
                let Some(q) = self.project(*p + dir * d, 12) else {
                    continue;
                };
                let dq = self.deriv(q, sign);
                if dq.speed < self.ctrl.tol_sing * T::of(1.2) {
                    continue;
                }
                let out = q - *p;
                let gap = out.norm();
                if gap < d * T::half() {
                    continue;
                }
                // Diverging from the saddle, not falling back in.
                if dq.vel.dot(out) <= T::of(0.3) * dq.speed * gap {
                    continue;
                }
                let mean_speed = (speed_here + dq.speed) * T::half();
                let ds = if mean_speed > T::zero() {
                    gap / mean_speed
                } else {
                    T::zero()
                };
                *p = q;
                *s += ds;
                *arc += gap;
                traj.points.push(q);
                traj.s.push(*s);
                traj.arc.push(*arc);
                traj.restarts.push(traj.points.len() - 1);
                return true;
            }
        }
        false
    }

    /// Traces forward over `s_span` with closure detection.
    pub fn trace(&self, seed: V3<T>, s_span: T) -> Result<Trajectory<T>, TraceError> {
        self.run(seed, s_span, T::one(), true)
    }

    /// Traces against the flow. Samples come back ordered by increasing s in
    /// [-s_span, 0], the seed last, so the result is a ready-made history.
    pub fn trace_backward(&self, seed: V3<T>, s_span: T) -> Result<Trajectory<T>, TraceError> {
        let mut traj = self.run(seed, s_span, -T::one(), false)?;
        traj.points.reverse();
        let total_s = *traj.s.last().unwrap();
        let total_arc = *traj.arc.last().unwrap();
        let n = traj.s.len();
        let mut s_rev = Vec::with_capacity(n);
        let mut arc_rev = Vec::with_capacity(n);
        for i in (0..n).rev() {
            s_rev.push(-traj.s[i]);
            arc_rev.push(total_arc - traj.arc[i]);
        }
        let _ = total_s;
        traj.s = s_rev;
        traj.arc = arc_rev;
        let len = traj.points.len();
        for r in &mut traj.restarts {
            *r = len - 1 - *r;
        }
        traj.restarts.reverse();
        Ok(traj)
    }

    /// Continues a forward trajectory by `extra_s`, keeping closure checks
    /// against the original start point.
    pub fn extend(&self, traj: &mut Trajectory<T>, extra_s: T) -> Result<(), TraceError> {
        if traj.closure.is_periodic() || traj.stop == StopReason::Saddle {
            return Ok(());
        }
        let p0 = traj.points[0];
        let v0 = self.deriv(p0, T::one());
        let v0_dir = if v0.speed > T::zero() {
            v0.vel / v0.speed
        } else {
            V3::zero()
        };
        self.advance(traj, extra_s, T::one(), Some((p0, v0_dir)))
    }

    /// Post-hoc closure scan over stored samples: finds the first return of
    /// the start point modulo the lattice with matching tangent.
    pub fn detect_closure(&self, traj: &Trajectory<T>) -> ClosureTag<T> {
        if traj.closure.is_periodic() {
            return traj.closure;
        }
        let p0 = traj.points[0];
        let v0 = self.deriv(p0, T::one());
        if v0.speed == T::zero() {
            return ClosureTag::OpenUndetermined;
        }
        let v0_dir = v0.vel / v0.speed;
        let min_arc = self.ctrl.closure_tol * T::of(100.0);
        for i in 1..traj.len() {
            if traj.arc[i] < min_arc || i < 8 {
                continue;
            }
            let h = traj.s[i] - traj.s[i - 1];
            if h <= T::zero() {
                continue;
            }
            if let Some((period, shift)) = self.check_closure(
                traj.points[i - 1],
                traj.points[i],
                traj.s[i - 1],
                h,
                p0,
                v0_dir,
                T::one(),
            ) {
                return if shift == [0, 0, 0] {
                    ClosureTag::ClosedCompact { period }
                } else {
                    ClosureTag::PeriodicOpen { period, shift }
                };
            }
        }
        ClosureTag::OpenUndetermined
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{FourierDispersion, SphericalBand};
    use crate::field::{FieldSetup, PlaneSlice};
    use std::f64::consts::PI;

    type V = V3<f64>;

    fn z_slice(h: f64) -> PlaneSlice<f64> {
        PlaneSlice::new(FieldSetup::from_direction(V::new(0.0, 0.0, 1.0)), h)
    }

    #[test]
    fn spherical_orbit_is_a_circle_and_closes() {
        let band = SphericalBand;
        let slice = z_slice(0.0);
        let tracer = Tracer::new(&band, slice, 0.5, None, StepControl::default());
        let traj = tracer.trace(V::new(1.0, 0.0, 0.0), 10.0).unwrap();
        assert_eq!(traj.stop, StopReason::Closure);
        let ClosureTag::ClosedCompact { period } = traj.closure else {
            panic!("expected compact closure, got {:?}", traj.closure);
        };
        assert!(
            (period - 2.0 * PI).abs() < 1e-6,
            "period {period} should be 2*pi"
        );
        let last = *traj.points.last().unwrap();
        assert!(
            (last - V::new(1.0, 0.0, 0.0)).norm() < 1e-8,
            "return miss {:e}",
            (last - V::new(1.0, 0.0, 0.0)).norm()
        );
        for p in &traj.points {
            assert!((p.norm2() / 2.0 - 0.5).abs() < 1e-9);
            assert!(p.z.abs() < 1e-9);
        }
    }

    #[test]
    fn cubic_pocket_orbit_closes_compactly() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let slice = z_slice(0.3);
        let tracer = Tracer::new(&d, slice, 2.5, Some(&lat), StepControl::default());
        // Seed on the pocket around the band maximum at p = 0.
        let seed = V::new(0.5, 0.0, 0.3);
        let traj = tracer.trace(seed, 100.0).unwrap();
        let ClosureTag::ClosedCompact { period } = traj.closure else {
            panic!("pocket orbit should close, got {:?}", traj.closure);
        };
        assert!(period > 0.0 && period < 100.0);
        for p in &traj.points {
            assert!((d.energy(*p) - 2.5).abs() < 1e-9);
            assert!((p.z - 0.3).abs() < 1e-9);
        }
    }

    /// Dispersion cos(py) + 0.3 cos(pz): its level-0 set in a b = x plane is
    /// a family of open curves running monotonically along pz.
    fn open_band() -> FourierDispersion<f64> {
        use crate::dispersion::Harmonic;
        use crate::lattice::{reciprocal_from_direct, DirectLattice};
        let recip = reciprocal_from_direct(&DirectLattice::cubic()).unwrap();
        FourierDispersion::new(
            recip,
            vec![
                Harmonic::new([0, 1, 0], 1.0, 0.0),
                Harmonic::new([0, 0, 1], 0.3, 0.0),
            ],
        )
    }

    #[test]
    fn open_band_orbit_is_periodic_open_with_unit_shift() {
        let d = open_band();
        let lat = *d.lattice();
        let slice = PlaneSlice::new(FieldSetup::from_direction(V::new(1.0, 0.0, 0.0)), 0.0);
        let tracer = Tracer::new(&d, slice, 0.0, Some(&lat), StepControl::default());
        let traj = tracer.trace(V::new(0.0, PI / 2.0, PI / 2.0), 50.0).unwrap();
        let ClosureTag::PeriodicOpen { period, shift } = traj.closure else {
            panic!("expected periodic open, got {:?}", traj.closure);
        };
        assert_eq!(shift, [0, 0, 1], "orbit advances by one cell along z");
        assert!(period > 0.0);
        assert!(traj.restarts.is_empty(), "no saddles on this level");
        let last = *traj.points.last().unwrap();
        let start = traj.points[0];
        assert!(((last - start) - lat.integer_vector([0, 0, 1])).norm() < 1e-7);
    }

    /// At the critical level the separatrix grid carries no through-going
    /// flow: both segments of a line flow into each saddle, and the
    /// regularized continuation turns onto the crossing branch. The orbit
    /// closes into the diamond around the in-plane extremum.
    #[test]
    fn critical_level_orbit_closes_around_extremum() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let slice = z_slice(PI / 2.0);
        let tracer = Tracer::new(&d, slice, 0.0, Some(&lat), StepControl::default());
        let seed = V::new(PI / 2.0 - 1.3, PI / 2.0 + 1.3, PI / 2.0);
        let traj = tracer.trace(seed, 400.0).unwrap();
        let ClosureTag::ClosedCompact { period } = traj.closure else {
            panic!("expected the diamond to close, got {:?}", traj.closure);
        };
        assert!(period > 0.0);
        // Corners are passed either by an explicit hop or by a step that
        // rounds the corner on its own; only the count of explicit hops
        // varies, never the orbit.
        assert!(traj.restarts.len() <= 4, "restarts {:?}", traj.restarts);
        // Perimeter of the diamond with vertices at the saddles.
        let perimeter = 4.0 * PI * std::f64::consts::SQRT_2;
        assert!(
            (traj.total_arc() - perimeter).abs() < 0.005 * perimeter,
            "arc {} vs diamond perimeter {perimeter}",
            traj.total_arc()
        );
        // The orbit must visit every diamond vertex.
        let vertices = [
            V::new(0.0, PI, PI / 2.0),
            V::new(-PI, 0.0, PI / 2.0),
            V::new(0.0, -PI, PI / 2.0),
            V::new(PI, 0.0, PI / 2.0),
        ];
        for vert in vertices {
            let near = traj
                .points
                .iter()
                .map(|p| (*p - vert).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(near < 1e-3, "vertex {vert:?} missed by {near:e}");
        }
    }

    #[test]
    fn saddle_policy_stop_reports_partial_trace() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let slice = z_slice(PI / 2.0);
        let ctrl = StepControl {
            saddle: SaddlePolicy::Stop,
            ..StepControl::default()
        };
        let tracer = Tracer::new(&d, slice, 0.0, Some(&lat), ctrl);
        let seed = V::new(PI / 2.0 - 1.3, PI / 2.0 + 1.3, PI / 2.0);
        let traj = tracer.trace(seed, 300.0).unwrap();
        assert_eq!(traj.stop, StopReason::Saddle);
        assert!(traj.restarts.is_empty());
        let end = *traj.points.last().unwrap();
        let speed = tracer.flow(end).norm();
        assert!(speed < 1e-6, "stopped with speed {speed:e}");
    }

    #[test]
    fn conservation_along_long_trace() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let slice = z_slice(PI / 2.0);
        let tracer = Tracer::new(&d, slice, 0.0, Some(&lat), StepControl::default());
        let seed = V::new(PI / 2.0 - 1.3, PI / 2.0 + 1.3, PI / 2.0);
        let mut traj = tracer.trace(seed, 50.0).unwrap();
        if traj.stop == StopReason::Budget {
            tracer.extend(&mut traj, 50.0).unwrap();
        }
        for p in &traj.points {
            assert!((d.energy(*p)).abs() < 1e-9);
            assert!((p.z - PI / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reversibility_round_trip() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let slice = z_slice(0.4);
        let ctrl = StepControl {
            max_step: 0.1,
            ..StepControl::default()
        };
        let tracer = Tracer::new(&d, slice, 1.2, Some(&lat), ctrl);
        let seed = V::new(1.0, 0.2, 0.4);
        let fwd = tracer.trace(seed, 8.0).unwrap();
        assert_eq!(fwd.stop, StopReason::Budget);
        let end = *fwd.points.last().unwrap();
        let span = fwd.total_s();
        let back = tracer.trace_backward(end, span).unwrap();
        let returned = back.points[0];
        let start = fwd.points[0];
        assert!(
            (returned - start).norm() < 1e-6,
            "round trip misses by {:e}",
            (returned - start).norm()
        );
    }

    #[test]
    fn backward_trace_is_ordered_history() {
        let band = SphericalBand;
        let slice = z_slice(0.0);
        let tracer = Tracer::new(&band, slice, 0.5, None, StepControl::default());
        let traj = tracer.trace_backward(V::new(1.0, 0.0, 0.0), 3.0).unwrap();
        assert!(traj.s.windows(2).all(|w| w[1] > w[0]));
        assert!((*traj.s.last().unwrap()).abs() < 1e-12);
        assert!((traj.s[0] + 3.0).abs() < 1e-9);
        let seed_back = *traj.points.last().unwrap();
        assert!((seed_back - V::new(1.0, 0.0, 0.0)).norm() < 1e-9);
        assert!(traj.arc.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn volume_form_relation_holds_pointwise() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let slice = z_slice(0.4);
        let ctrl = StepControl {
            max_step: 1e-3,
            ..StepControl::default()
        };
        let tracer = Tracer::new(&d, slice, 1.2, Some(&lat), ctrl);
        let traj = tracer.trace(V::new(1.0, 0.2, 0.4), 0.5).unwrap();
        for i in 1..traj.len() {
            let dl = traj.arc[i] - traj.arc[i - 1];
            let ds = traj.s[i] - traj.s[i - 1];
            let va = tracer.flow(traj.points[i - 1]).norm();
            let vb = tracer.flow(traj.points[i]).norm();
            let mid = 0.5 * (va + vb);
            assert!(
                (dl - mid * ds).abs() <= 1e-6 * dl.max(1e-30),
                "volume form violated: dl {dl:e} vs speed*ds {:e}",
                mid * ds
            );
        }
    }

    #[test]
    fn seed_far_from_surface_is_rejected() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let slice = z_slice(0.0);
        let tracer = Tracer::new(&d, slice, 12.0, Some(&lat), StepControl::default());
        assert!(matches!(
            tracer.trace(V::new(0.1, 0.2, 0.0), 1.0),
            Err(TraceError::SeedOffSurface { .. })
        ));
    }

    #[test]
    fn standalone_closure_detection_matches_inline() {
        let band = SphericalBand;
        let slice = z_slice(0.0);
        let mut ctrl = StepControl::default();
        ctrl.closure_tol = 0.0; // disable inline detection
        let tracer = Tracer::new(&band, slice, 0.5, None, ctrl);
        let traj = tracer.trace(V::new(1.0, 0.0, 0.0), 20.0).unwrap();
        assert_eq!(traj.closure, ClosureTag::OpenUndetermined);
        let mut ctrl2 = StepControl::default();
        ctrl2.closure_tol = 1e-6;
        let tracer2 = Tracer::new(&band, slice, 0.5, None, ctrl2);
        let tag = tracer2.detect_closure(&traj);
        let ClosureTag::ClosedCompact { period } = tag else {
            panic!("expected closure, got {tag:?}");
        };
        assert!((period - 2.0 * PI).abs() < 1e-6);
    }
}

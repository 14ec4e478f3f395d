//! Dispersion relations epsilon(p) and their derivatives.
//!
//! The crystal dispersion is a finite Fourier series over the reciprocal
//! lattice. The free-electron band is kept alongside it because several
//! oracles (circular orbits, Drude conductivity) have closed forms there.

use crate::geom::{M33, V3};
use crate::lattice::ReciprocalLattice;
use crate::num::Real;

/// One Fourier harmonic, indexed by an integer triple in the a-basis.
#[derive(Clone, Copy, Debug)]
pub struct Harmonic<T> {
    pub k: [i32; 3],
    pub amplitude: T,
    pub phase: T,
}

impl<T: Real> Harmonic<T> {
    pub fn new(k: [i32; 3], amplitude: T, phase: T) -> Self {
        Self {
            k,
            amplitude,
            phase,
        }
    }
}

/// Anything the tracer can move on: energy plus first two derivatives.
pub trait Dispersion<T: Real>: Sync {
    fn energy(&self, p: V3<T>) -> T;
    fn gradient(&self, p: V3<T>) -> V3<T>;
    fn hessian(&self, p: V3<T>) -> M33<T>;
}

struct CachedHarmonic<T> {
    /// Integer triple as scalars, dotted with fractional coordinates.
    kf: V3<T>,
    /// Wave vector K = k1*l1 + k2*l2 + k3*l3 (a direct-lattice vector),
    /// which is the p-gradient of the harmonic phase.
    kvec: V3<T>,
    amplitude: T,
    phase: T,
}

/// Finite Fourier series
/// `epsilon(p) = sum_k A_k cos(2*pi * k . f(p) + phi_k)`
/// with f(p) the fractional coordinates of p in the a-basis. Phases are
/// evaluated from torus-wrapped fractionals so periodicity is exact even
/// far out in the covering space.
pub struct FourierDispersion<T> {
    lattice: ReciprocalLattice<T>,
    harmonics: Vec<Harmonic<T>>,
    cached: Vec<CachedHarmonic<T>>,
}

impl<T: Real> FourierDispersion<T> {
    pub fn new(lattice: ReciprocalLattice<T>, harmonics: Vec<Harmonic<T>>) -> Self {
        let dual = lattice.dual_basis();
        let cached = harmonics
            .iter()
            .map(|h| {
                let kvec = dual[0] * T::of(h.k[0] as f64)
                    + dual[1] * T::of(h.k[1] as f64)
                    + dual[2] * T::of(h.k[2] as f64);
                CachedHarmonic {
                    kf: V3::new(
                        T::of(h.k[0] as f64),
                        T::of(h.k[1] as f64),
                        T::of(h.k[2] as f64),
                    ),
                    kvec,
                    amplitude: h.amplitude,
                    phase: h.phase,
                }
            })
            .collect();
        Self {
            lattice,
            harmonics,
            cached,
        }
    }

    /// Tight-binding model `cos px + cos py + cos pz` on the unit cubic
    /// lattice (reciprocal edge 2*pi).
    pub fn cubic() -> Self {
        use crate::lattice::{reciprocal_from_direct, DirectLattice};
        let recip = reciprocal_from_direct(&DirectLattice::cubic()).expect("cubic lattice");
        let one = T::one();
        let zero = T::zero();
        Self::new(
            recip,
            vec![
                Harmonic::new([1, 0, 0], one, zero),
                Harmonic::new([0, 1, 0], one, zero),
                Harmonic::new([0, 0, 1], one, zero),
            ],
        )
    }

    pub fn lattice(&self) -> &ReciprocalLattice<T> {
        &self.lattice
    }

    pub fn harmonics(&self) -> &[Harmonic<T>] {
        &self.harmonics
    }

    /// Torus-wrapped fractional coordinates in [0, 1).
    #[inline]
    fn wrapped_fractional(&self, p: V3<T>) -> V3<T> {
        let f = self.lattice.fractional(p);
        V3::new(f.x - f.x.floor(), f.y - f.y.floor(), f.z - f.z.floor())
    }
}

impl<T: Real> Dispersion<T> for FourierDispersion<T> {
    fn energy(&self, p: V3<T>) -> T {
        let fw = self.wrapped_fractional(p);
        let tau = T::TAU();
        let mut e = T::zero();
        for h in &self.cached {
            e += h.amplitude * (tau * h.kf.dot(fw) + h.phase).cos();
        }
        e
    }

    fn gradient(&self, p: V3<T>) -> V3<T> {
        let fw = self.wrapped_fractional(p);
        let tau = T::TAU();
        let mut g = V3::zero();
        for h in &self.cached {
            let s = (tau * h.kf.dot(fw) + h.phase).sin();
            g -= h.kvec * (h.amplitude * s);
        }
        g
    }

    fn hessian(&self, p: V3<T>) -> M33<T> {
        let fw = self.wrapped_fractional(p);
        let tau = T::TAU();
        let mut hess = M33::zero();
        for h in &self.cached {
            let c = (tau * h.kf.dot(fw) + h.phase).cos();
            hess = hess.add(&M33::outer(h.kvec, h.kvec).scale(-h.amplitude * c));
        }
        hess
    }
}

/// Free-electron band `epsilon(p) = |p|^2 / 2`. Not lattice-periodic; its
/// constant-energy surfaces are spheres and all orbits are circles.
pub struct SphericalBand;

impl<T: Real> Dispersion<T> for SphericalBand {
    fn energy(&self, p: V3<T>) -> T {
        p.norm2() * T::half()
    }

    fn gradient(&self, p: V3<T>) -> V3<T> {
        p
    }

    fn hessian(&self, _p: V3<T>) -> M33<T> {
        M33::identity()
    }
}

/// Min and max of the band over the torus: coarse grid scan plus Newton
/// polish of the candidate extrema on the gradient.
pub fn energy_range<T: Real>(disp: &FourierDispersion<T>, samples: usize) -> (T, T) {
    let n = (samples.max(8) as f64).cbrt().ceil() as usize;
    let lat = *disp.lattice();
    let step = T::one() / T::of(n as f64);
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    let mut arg_lo = V3::zero();
    let mut arg_hi = V3::zero();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let f = V3::new(
                    T::of(i as f64) * step,
                    T::of(j as f64) * step,
                    T::of(k as f64) * step,
                );
                let p = lat.a1 * f.x + lat.a2 * f.y + lat.a3 * f.z;
                let e = disp.energy(p);
                if e < lo {
                    lo = e;
                    arg_lo = p;
                }
                if e > hi {
                    hi = e;
                    arg_hi = p;
                }
            }
        }
    }
    // Newton steps on grad(epsilon) = 0 from both candidates.
    for (arg, out, minimizing) in [(arg_lo, &mut lo, true), (arg_hi, &mut hi, false)] {
        let mut p = arg;
        for _ in 0..20 {
            let g = disp.gradient(p);
            if g.norm() < T::of(1e-13) {
                break;
            }
            let h = disp.hessian(p);
            match h.solve(-g) {
                Some(step) if step.norm() < lat.cell_scale() => p += step,
                _ => break,
            }
        }
        let e = disp.energy(p);
        if minimizing {
            *out = (*out).min(e);
        } else {
            *out = (*out).max(e);
        }
    }
    (lo, hi)
}

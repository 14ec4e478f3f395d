//! Magnetic-field frame and plane slices of momentum space.
//!
//! Orbits live on intersections of a constant-energy surface with planes
//! orthogonal to the field direction; all planar analysis happens in the
//! (e1, e2) coordinates of such a plane.

use crate::dispersion::Dispersion;
use crate::geom::{V2, V3};
use crate::num::Real;

/// Unit field direction plus a right-handed orthonormal in-plane frame:
/// `e1 x e2 = b_hat`.
#[derive(Clone, Copy, Debug)]
pub struct FieldSetup<T> {
    pub b_hat: V3<T>,
    pub e1: V3<T>,
    pub e2: V3<T>,
}

impl<T: Real> FieldSetup<T> {
    /// Builds the frame from a field direction, choosing e1 along the
    /// coordinate axis least aligned with it (deterministic).
    pub fn from_direction(b: V3<T>) -> Self {
        let b_hat = b.normalized();
        let axes = [
            V3::new(T::one(), T::zero(), T::zero()),
            V3::new(T::zero(), T::one(), T::zero()),
            V3::new(T::zero(), T::zero(), T::one()),
        ];
        let mut reference = axes[0];
        let mut best = T::infinity();
        for ax in axes {
            let overlap = ax.dot(b_hat).abs();
            if overlap < best {
                best = overlap;
                reference = ax;
            }
        }
        let e1 = (reference - b_hat * reference.dot(b_hat)).normalized();
        let e2 = b_hat.cross(e1);
        Self { b_hat, e1, e2 }
    }

    /// Frame with both directions supplied; asserts orthonormality.
    pub fn from_frame(b: V3<T>, e1: V3<T>) -> Self {
        let b_hat = b.normalized();
        let e1 = e1.normalized();
        let tol = T::of(1e-10);
        assert!(
            b_hat.dot(e1).abs() < tol,
            "e1 must be orthogonal to the field direction"
        );
        let e2 = b_hat.cross(e1);
        Self { b_hat, e1, e2 }
    }

    /// In-plane (e1, e2) components of a vector.
    #[inline]
    pub fn planar(&self, v: V3<T>) -> V2<T> {
        V2::new(v.dot(self.e1), v.dot(self.e2))
    }

    /// Lifts in-plane components back to 3-space (no offset).
    #[inline]
    pub fn lift_dir(&self, r: V2<T>) -> V3<T> {
        self.e1 * r.x + self.e2 * r.y
    }
}

/// The plane `p . b_hat = h`, with planar coordinates centered on
/// `origin = h * b_hat`.
#[derive(Clone, Copy, Debug)]
pub struct PlaneSlice<T> {
    pub setup: FieldSetup<T>,
    pub h: T,
}

impl<T: Real> PlaneSlice<T> {
    pub fn new(setup: FieldSetup<T>, h: T) -> Self {
        Self { setup, h }
    }

    #[inline]
    pub fn origin(&self) -> V3<T> {
        self.setup.b_hat * self.h
    }

    /// Point of the plane with coordinates (u, v).
    #[inline]
    pub fn lift(&self, r: V2<T>) -> V3<T> {
        self.origin() + self.setup.e1 * r.x + self.setup.e2 * r.y
    }

    /// Planar coordinates of a 3-space point (drops the off-plane part).
    #[inline]
    pub fn planar(&self, p: V3<T>) -> V2<T> {
        let d = p - self.origin();
        V2::new(d.dot(self.setup.e1), d.dot(self.setup.e2))
    }

    /// Signed distance of `p` from the plane.
    #[inline]
    pub fn residual(&self, p: V3<T>) -> T {
        p.dot(self.setup.b_hat) - self.h
    }
}

/// The slice function g(u, v) = epsilon(lift(u, v)) and its derivatives.
pub struct SliceField<'a, T, D> {
    pub disp: &'a D,
    pub slice: PlaneSlice<T>,
}

impl<'a, T: Real, D: Dispersion<T>> SliceField<'a, T, D> {
    pub fn new(disp: &'a D, slice: PlaneSlice<T>) -> Self {
        Self { disp, slice }
    }

    #[inline]
    pub fn value(&self, r: V2<T>) -> T {
        self.disp.energy(self.slice.lift(r))
    }

    #[inline]
    pub fn grad(&self, r: V2<T>) -> V2<T> {
        let g = self.disp.gradient(self.slice.lift(r));
        self.slice.setup.planar(g)
    }

    /// Restricted Hessian `[e_a^T H e_b]` as (a11, a12, a22).
    pub fn hess(&self, r: V2<T>) -> (T, T, T) {
        let h = self.disp.hessian(self.slice.lift(r));
        let e1 = self.slice.setup.e1;
        let e2 = self.slice.setup.e2;
        let he1 = h.mul_vec(e1);
        let he2 = h.mul_vec(e2);
        (e1.dot(he1), e1.dot(he2), e2.dot(he2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::FourierDispersion;
    use std::f64::consts::PI;

    #[test]
    fn frame_is_right_handed_orthonormal() {
        let dirs: [V3<f64>; 4] = [
            V3::new(0.0, 0.0, 1.0),
            V3::new(1.0, 1.0, 1.0),
            V3::new(-0.3, 0.9, 0.1),
            V3::new(1.0, 0.0, 0.0),
        ];
        for b in dirs {
            let f = FieldSetup::from_direction(b);
            assert!((f.b_hat.norm() - 1.0).abs() < 1e-12);
            assert!((f.e1.norm() - 1.0).abs() < 1e-12);
            assert!(f.e1.dot(f.b_hat).abs() < 1e-12);
            assert!(f.e2.dot(f.b_hat).abs() < 1e-12);
            assert!(f.e1.dot(f.e2).abs() < 1e-12);
            assert!((f.e1.cross(f.e2) - f.b_hat).norm() < 1e-12);
        }
    }

    #[test]
    fn cubic_slice_at_half_pi_is_two_cosines() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let setup = FieldSetup::from_direction(V3::new(0.0, 0.0, 1.0));
        let slice = PlaneSlice::new(setup, PI / 2.0);
        let f = SliceField::new(&d, slice);
        let probes: [V2<f64>; 3] = [V2::new(0.0, 0.0), V2::new(1.1, -0.4), V2::new(-2.0, 3.3)];
        for r in probes {
            // e1/e2 for b = z are coordinate axes, so g = cos u + cos v.
            let want = (r.x).cos() + (r.y).cos();
            assert!((f.value(r) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn lift_and_planar_are_inverse_on_the_plane() {
        let setup: FieldSetup<f64> = FieldSetup::from_direction(V3::new(0.3, -0.2, 0.93));
        let slice = PlaneSlice::new(setup, 1.37);
        let r = V2::new(0.8, -4.1);
        let p = slice.lift(r);
        assert!(slice.residual(p).abs() < 1e-12);
        let back = slice.planar(p);
        assert!((back.x - r.x).abs() < 1e-12 && (back.y - r.y).abs() < 1e-12);
    }
}

//! Direct and reciprocal lattices of the crystal.
//!
//! Units keep hbar = e = c = 1, so the duality reads (a_i, l_j) = 2*pi*delta_ij
//! and momentum space is the torus R^3 / L* with L* spanned by the a_i.

use thiserror::Error;

use crate::geom::{M33, V3};
use crate::num::Real;

const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("degenerate lattice: |(l1, l2, l3)| = {triple:e} below tolerance")]
    Degenerate { triple: f64 },
}

/// Direct (real-space) lattice basis.
#[derive(Clone, Copy, Debug)]
pub struct DirectLattice<T> {
    pub l1: V3<T>,
    pub l2: V3<T>,
    pub l3: V3<T>,
}

impl<T: Real> DirectLattice<T> {
    pub fn new(l1: V3<T>, l2: V3<T>, l3: V3<T>) -> Self {
        Self { l1, l2, l3 }
    }

    /// Cubic lattice with unit edge; its reciprocal cell has edge 2*pi.
    pub fn cubic() -> Self {
        Self::new(
            V3::new(T::one(), T::zero(), T::zero()),
            V3::new(T::zero(), T::one(), T::zero()),
            V3::new(T::zero(), T::zero(), T::one()),
        )
    }

    pub fn basis(&self) -> [V3<T>; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn triple_product(&self) -> T {
        self.l1.dot(self.l2.cross(self.l3))
    }

    /// Integer combination `m1*l1 + m2*l2 + m3*l3`.
    pub fn integer_vector(&self, m: [i64; 3]) -> V3<T> {
        self.l1 * T::of(m[0] as f64) + self.l2 * T::of(m[1] as f64) + self.l3 * T::of(m[2] as f64)
    }
}

/// Reciprocal lattice basis with cached fractional-coordinate transform.
#[derive(Clone, Copy, Debug)]
pub struct ReciprocalLattice<T> {
    pub a1: V3<T>,
    pub a2: V3<T>,
    pub a3: V3<T>,
    /// Inverse of the column matrix [a1 a2 a3]; maps p to fractional coords.
    inv: M33<T>,
    /// Dual basis: direct-lattice vectors satisfying (a_i, l_j) = 2*pi*delta_ij.
    dual: [V3<T>; 3],
}

impl<T: Real> ReciprocalLattice<T> {
    pub fn new(a1: V3<T>, a2: V3<T>, a3: V3<T>) -> Result<Self, LatticeError> {
        let cols = M33::from_cols(a1, a2, a3);
        let inv = cols
            .inverse(T::of(DEGENERACY_TOL))
            .ok_or(LatticeError::Degenerate {
                triple: cols.det().to_f64().unwrap_or(0.0),
            })?;
        // Rows of 2*pi * inv are the dual (direct-lattice) basis vectors.
        let tau = T::TAU();
        let dual = [
            inv.row(0) * tau,
            inv.row(1) * tau,
            inv.row(2) * tau,
        ];
        Ok(Self {
            a1,
            a2,
            a3,
            inv,
            dual,
        })
    }

    pub fn basis(&self) -> [V3<T>; 3] {
        [self.a1, self.a2, self.a3]
    }

    /// Direct-lattice basis recovered by duality.
    pub fn dual_basis(&self) -> [V3<T>; 3] {
        self.dual
    }

    /// Fractional coordinates of `p` in the a-basis.
    #[inline]
    pub fn fractional(&self, p: V3<T>) -> V3<T> {
        self.inv.mul_vec(p)
    }

    /// Integer combination `n1*a1 + n2*a2 + n3*a3`.
    pub fn integer_vector(&self, n: [i64; 3]) -> V3<T> {
        self.a1 * T::of(n[0] as f64) + self.a2 * T::of(n[1] as f64) + self.a3 * T::of(n[2] as f64)
    }

    /// Reduces `p` into the fundamental cell (fractional coords in [0, 1)).
    /// Returns the reduced point and the integer shift that was removed,
    /// so `p = reduced + shift . a`.
    pub fn reduce_to_torus(&self, p: V3<T>) -> (V3<T>, [i64; 3]) {
        let f = self.fractional(p);
        let shift = [
            f.x.floor().to_i64().expect("fractional coordinate in i64 range"),
            f.y.floor().to_i64().expect("fractional coordinate in i64 range"),
            f.z.floor().to_i64().expect("fractional coordinate in i64 range"),
        ];
        let reduced = p - self.integer_vector(shift);
        (reduced, shift)
    }

    /// Nearest lattice vector to `delta` and the residual `delta - g`.
    pub fn nearest_lattice_vector(&self, delta: V3<T>) -> ([i64; 3], V3<T>) {
        let f = self.fractional(delta);
        let n = [
            f.x.round().to_i64().expect("fractional coordinate in i64 range"),
            f.y.round().to_i64().expect("fractional coordinate in i64 range"),
            f.z.round().to_i64().expect("fractional coordinate in i64 range"),
        ];
        (n, delta - self.integer_vector(n))
    }

    /// Longest basis-vector norm; used as the cell diameter scale.
    pub fn cell_scale(&self) -> T {
        self.a1.norm().max(self.a2.norm()).max(self.a3.norm())
    }
}

/// Builds the reciprocal basis `a_i = 2*pi * (l_j x l_k) / (l1, l2, l3)`
/// with (i, j, k) cyclic.
pub fn reciprocal_from_direct<T: Real>(
    direct: &DirectLattice<T>,
) -> Result<ReciprocalLattice<T>, LatticeError> {
    let triple = direct.triple_product();
    let scale = direct
        .l1
        .norm()
        .max(direct.l2.norm())
        .max(direct.l3.norm());
    if triple.abs() <= T::of(DEGENERACY_TOL) * scale.powi(3) {
        return Err(LatticeError::Degenerate {
            triple: triple.to_f64().unwrap_or(0.0),
        });
    }
    let tau = T::TAU();
    let a1 = direct.l2.cross(direct.l3) * (tau / triple);
    let a2 = direct.l3.cross(direct.l1) * (tau / triple);
    let a3 = direct.l1.cross(direct.l2) * (tau / triple);
    ReciprocalLattice::new(a1, a2, a3)
}

#[cfg(test)]
mod tests {
    use super::*;

    type V = V3<f64>;

    fn duality_residual(direct: &DirectLattice<f64>, recip: &ReciprocalLattice<f64>) -> f64 {
        let ls = direct.basis();
        let as_ = recip.basis();
        let mut worst: f64 = 0.0;
        for (i, a) in as_.iter().enumerate() {
            for (j, l) in ls.iter().enumerate() {
                let want = if i == j { std::f64::consts::TAU } else { 0.0 };
                worst = worst.max((a.dot(*l) - want).abs());
            }
        }
        worst
    }

    #[test]
    fn cubic_reciprocal_is_two_pi_cube() {
        let direct = DirectLattice::cubic();
        let recip = reciprocal_from_direct(&direct).unwrap();
        let tau = std::f64::consts::TAU;
        assert!((recip.a1 - V::new(tau, 0.0, 0.0)).norm() < 1e-12);
        assert!((recip.a2 - V::new(0.0, tau, 0.0)).norm() < 1e-12);
        assert!((recip.a3 - V::new(0.0, 0.0, tau)).norm() < 1e-12);
        assert!(duality_residual(&direct, &recip) < 1e-12);
    }

    #[test]
    fn orthorhombic_reciprocal_scales_inversely() {
        let direct = DirectLattice::new(
            V::new(1.0, 0.0, 0.0),
            V::new(0.0, 2.0, 0.0),
            V::new(0.0, 0.0, 3.0),
        );
        let recip = reciprocal_from_direct(&direct).unwrap();
        let pi = std::f64::consts::PI;
        assert!((recip.a1 - V::new(2.0 * pi, 0.0, 0.0)).norm() < 1e-12);
        assert!((recip.a2 - V::new(0.0, pi, 0.0)).norm() < 1e-12);
        assert!((recip.a3 - V::new(0.0, 0.0, 2.0 * pi / 3.0)).norm() < 1e-12);
    }

    // Oracle: solve the nine duality equations (a_i, l_j) = 2*pi*delta_ij
    // directly, row by row, with Gaussian elimination.
    #[test]
    fn sheared_basis_matches_linear_system_oracle() {
        let direct = DirectLattice::new(
            V::new(1.0, 0.0, 0.0),
            V::new(0.5, 1.0, 0.0),
            V::new(0.0, 0.0, 1.0),
        );
        let recip = reciprocal_from_direct(&direct).unwrap();
        let lmat = M33::from_rows(direct.l1, direct.l2, direct.l3);
        let tau = std::f64::consts::TAU;
        let targets = [
            V::new(tau, 0.0, 0.0),
            V::new(0.0, tau, 0.0),
            V::new(0.0, 0.0, tau),
        ];
        for (i, t) in targets.iter().enumerate() {
            let a_oracle = lmat.solve(*t).unwrap();
            assert!(
                (recip.basis()[i] - a_oracle).norm() < 1e-12,
                "basis vector {i} disagrees with linear-system oracle"
            );
        }
        assert!(duality_residual(&direct, &recip) < 1e-12);
    }

    #[test]
    fn reduce_to_torus_cubic_examples() {
        let recip = reciprocal_from_direct(&DirectLattice::cubic()).unwrap();
        let tau = std::f64::consts::TAU;

        let (red, shift) = recip.reduce_to_torus(V::new(tau + 0.1, 0.0, 0.0));
        assert!((red - V::new(0.1, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(shift, [1, 0, 0]);

        let (red, shift) = recip.reduce_to_torus(V::new(-0.1, 2.0 * tau, 0.0));
        assert!((red - V::new(tau - 0.1, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(shift, [-1, 2, 0]);
    }

    #[test]
    fn reduction_idempotent_and_in_cell() {
        let direct = DirectLattice::new(
            V::new(1.0, 0.2, 0.0),
            V::new(0.0, 1.3, 0.1),
            V::new(0.3, 0.0, 0.9),
        );
        let recip = reciprocal_from_direct(&direct).unwrap();
        let p = V::new(17.3, -42.1, 3.3);
        let (red, _) = recip.reduce_to_torus(p);
        let f = recip.fractional(red);
        for c in [f.x, f.y, f.z] {
            assert!((0.0..1.0).contains(&c), "fractional {c} outside [0,1)");
        }
        let (red2, shift2) = recip.reduce_to_torus(red);
        assert_eq!(shift2, [0, 0, 0]);
        assert!((red2 - red).norm() < 1e-12);
    }

    #[test]
    fn coplanar_basis_is_degenerate() {
        let direct = DirectLattice::new(
            V::new(1.0, 0.0, 0.0),
            V::new(0.0, 1.0, 0.0),
            V::new(1.0, 1.0, 0.0),
        );
        assert!(matches!(
            reciprocal_from_direct(&direct),
            Err(LatticeError::Degenerate { .. })
        ));
    }

    #[test]
    fn dual_basis_round_trips() {
        let direct = DirectLattice::new(
            V::new(1.0, 0.0, 0.0),
            V::new(0.5, 1.0, 0.0),
            V::new(0.2, -0.3, 1.1),
        );
        let recip = reciprocal_from_direct(&direct).unwrap();
        let dual = recip.dual_basis();
        for (d, l) in dual.iter().zip(direct.basis()) {
            assert!((*d - l).norm() < 1e-12);
        }
    }
}

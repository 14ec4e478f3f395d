//! Small fixed-size vectors and matrices.
//!
//! Hand-rolled 2/3-vectors and a 3x3 matrix are all the laboratory needs;
//! keeping them local avoids dragging a linear-algebra stack into every
//! downstream crate.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::num::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct V3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct V2<T> {
    pub x: T,
    pub y: T,
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct M33<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> V3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm2(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm2().sqrt()
    }

    /// Unit vector; panics on the zero vector.
    #[inline]
    pub fn normalized(self) -> Self {
        let n = self.norm();
        assert!(n > T::zero(), "cannot normalize zero vector");
        self / n
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    #[inline]
    pub fn as_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Angle to another vector in radians, clamped against roundoff.
    pub fn angle_to(self, o: Self) -> T {
        let c = self.dot(o) / (self.norm() * o.norm());
        c.min(T::one()).max(-T::one()).acos()
    }
}

impl<T: Real> V2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the planar cross product.
    #[inline]
    pub fn perp_dot(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm2(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn normalized(self) -> Self {
        let n = self.norm();
        assert!(n > T::zero(), "cannot normalize zero vector");
        self / n
    }

    /// Counter-clockwise quarter turn.
    #[inline]
    pub fn rot90(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn angle_to(self, o: Self) -> T {
        let c = self.dot(o) / (self.norm() * o.norm());
        c.min(T::one()).max(-T::one()).acos()
    }
}

macro_rules! impl_vec_ops {
    ($ty:ident { $($f:ident),+ }) => {
        impl<T: Real> Add for $ty<T> {
            type Output = Self;
            #[inline]
            fn add(self, o: Self) -> Self {
                Self { $($f: self.$f + o.$f),+ }
            }
        }
        impl<T: Real> Sub for $ty<T> {
            type Output = Self;
            #[inline]
            fn sub(self, o: Self) -> Self {
                Self { $($f: self.$f - o.$f),+ }
            }
        }
        impl<T: Real> Neg for $ty<T> {
            type Output = Self;
            #[inline]
            fn neg(self) -> Self {
                Self { $($f: -self.$f),+ }
            }
        }
        impl<T: Real> Mul<T> for $ty<T> {
            type Output = Self;
            #[inline]
            fn mul(self, s: T) -> Self {
                Self { $($f: self.$f * s),+ }
            }
        }
        impl<T: Real> Div<T> for $ty<T> {
            type Output = Self;
            #[inline]
            fn div(self, s: T) -> Self {
                Self { $($f: self.$f / s),+ }
            }
        }
        impl<T: Real> AddAssign for $ty<T> {
            #[inline]
            fn add_assign(&mut self, o: Self) {
                $(self.$f += o.$f;)+
            }
        }
        impl<T: Real> SubAssign for $ty<T> {
            #[inline]
            fn sub_assign(&mut self, o: Self) {
                $(self.$f -= o.$f;)+
            }
        }
    };
}

impl_vec_ops!(V3 { x, y, z });
impl_vec_ops!(V2 { x, y });

impl<T: Real> M33<T> {
    #[inline]
    pub fn from_rows(r0: V3<T>, r1: V3<T>, r2: V3<T>) -> Self {
        Self {
            m: [r0.as_array(), r1.as_array(), r2.as_array()],
        }
    }

    #[inline]
    pub fn from_cols(c0: V3<T>, c1: V3<T>, c2: V3<T>) -> Self {
        Self::from_rows(c0, c1, c2).transpose()
    }

    #[inline]
    pub fn zero() -> Self {
        Self {
            m: [[T::zero(); 3]; 3],
        }
    }

    #[inline]
    pub fn identity() -> Self {
        let mut m = Self::zero();
        m.m[0][0] = T::one();
        m.m[1][1] = T::one();
        m.m[2][2] = T::one();
        m
    }

    #[inline]
    pub fn row(&self, i: usize) -> V3<T> {
        V3::from_array(self.m[i])
    }

    #[inline]
    pub fn col(&self, j: usize) -> V3<T> {
        V3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                t.m[i][j] = self.m[j][i];
            }
        }
        t
    }

    pub fn det(&self) -> T {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    pub fn mul_vec(&self, v: V3<T>) -> V3<T> {
        V3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s += self.m[i][k] * o.m[k][j];
                }
                r.m[i][j] = s;
            }
        }
        r
    }

    /// Inverse through the adjugate; `None` when the determinant is
    /// smaller than `tol` relative to the matrix scale.
    pub fn inverse(&self, tol: T) -> Option<Self> {
        let r0 = self.row(0);
        let r1 = self.row(1);
        let r2 = self.row(2);
        let c0 = r1.cross(r2);
        let c1 = r2.cross(r0);
        let c2 = r0.cross(r1);
        let det = r0.dot(c0);
        let scale = r0.norm().max(r1.norm()).max(r2.norm());
        if det.abs() <= tol * scale * scale * scale {
            return None;
        }
        Some(Self::from_rows(c0 / det, c1 / det, c2 / det).transpose())
    }

    /// Solves `self * x = b` by partial-pivot elimination.
    pub fn solve(&self, b: V3<T>) -> Option<V3<T>> {
        let mut a = self.m;
        let mut r = b.as_array();
        for col in 0..3 {
            let mut piv = col;
            for row in col + 1..3 {
                if a[row][col].abs() > a[piv][col].abs() {
                    piv = row;
                }
            }
            if a[piv][col].abs() <= T::epsilon() * T::of(16.0) {
                return None;
            }
            a.swap(col, piv);
            r.swap(col, piv);
            for row in col + 1..3 {
                let f = a[row][col] / a[col][col];
                for k in col..3 {
                    let sub = f * a[col][k];
                    a[row][k] = a[row][k] - sub;
                }
                r[row] = r[row] - f * r[col];
            }
        }
        let mut x = [T::zero(); 3];
        for row in (0..3).rev() {
            let mut s = r[row];
            for k in row + 1..3 {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        Some(V3::from_array(x))
    }

    pub fn outer(a: V3<T>, b: V3<T>) -> Self {
        let mut m = Self::zero();
        let av = a.as_array();
        let bv = b.as_array();
        for i in 0..3 {
            for j in 0..3 {
                m.m[i][j] = av[i] * bv[j];
            }
        }
        m
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = self.m[i][j] + o.m[i][j];
            }
        }
        r
    }

    pub fn scale(&self, s: T) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = r.m[i][j] * s;
            }
        }
        r
    }
}

/// Eigenvalues and eigenvectors of a symmetric 2x2 matrix
/// `[[a, b], [b, c]]`, ordered so the first eigenvalue is the largest.
pub fn sym2_eigen<T: Real>(a: T, b: T, c: T) -> ((T, V2<T>), (T, V2<T>)) {
    let tr = a + c;
    let disc = ((a - c) * T::half()).powi(2) + b * b;
    let root = disc.max(T::zero()).sqrt();
    let l1 = tr * T::half() + root;
    let l2 = tr * T::half() - root;
    let v1 = if b.abs() > T::epsilon() * (a.abs() + c.abs() + T::one()) {
        V2::new(l1 - c, b).normalized()
    } else if a >= c {
        V2::new(T::one(), T::zero())
    } else {
        V2::new(T::zero(), T::one())
    };
    let v2 = v1.rot90();
    ((l1, v1), (l2, v2))
}

/// Eigenvalues of a symmetric 3x3 matrix by cyclic Jacobi sweeps, sorted
/// descending. The input is symmetrized first, so a slightly asymmetric
/// matrix contributes only its symmetric part.
pub fn sym3_eigenvalues<T: Real>(m: &M33<T>) -> [T; 3] {
    let mut a = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] = (m.m[i][j] + m.m[j][i]) * T::half();
        }
    }
    let scale = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .fold(T::zero(), |acc, (i, j)| acc.max(a[i][j].abs()))
        .max(T::one());
    let stop = scale * T::epsilon() * T::of(16.0);
    for _ in 0..64 {
        let off = (a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2)).sqrt();
        if off <= stop {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq.abs() <= stop * T::of(1e-3) {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::two() * apq);
            let t = {
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                sign / (theta.abs() + (theta * theta + T::one()).sqrt())
            };
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
        }
    }
    let mut eig = [a[0][0], a[1][1], a[2][2]];
    eig.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    eig
}

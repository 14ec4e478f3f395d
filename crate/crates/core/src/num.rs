//! Scalar abstraction for the numerical kernels.
//!
//! Everything downstream is generic over [`Real`] so the same code runs in
//! f32 or f64; concrete aliases live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps};

/// Floating-point scalar used by all kernels.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Shorthand for converting an f64 literal into the working scalar.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::one() / Self::two()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Relative-or-absolute closeness test used throughout the test suites.
#[inline]
pub fn close<T: Real>(a: T, b: T, tol: T) -> bool {
    let scale = T::one().max(a.abs()).max(b.abs());
    (a - b).abs() <= tol * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn of_round_trips_literals() {
        assert_eq!(f64::of(1.5), 1.5);
        assert_eq!(f32::of(0.25), 0.25f32);
    }

    #[test]
    fn close_uses_relative_scale() {
        assert!(close(1.0e12, 1.0e12 + 1.0, 1.0e-9));
        assert!(!close(1.0, 1.1, 1.0e-3));
    }
}

//! Floating-point abstraction for the numeric core.
//!
//! All quantum-state math (amplitudes, density matrices, channels, fidelity)
//! is generic over a [`Scalar`] so it can run at `f32` or `f64` precision.
//! The simulation engine itself (clocks, schedules, configuration) is pinned
//! to `f64` through the type aliases exported from the crate root.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar type underlying complex amplitudes.
///
/// Implemented for `f32` and `f64`. The trait only bundles the `num_traits`
/// capabilities the state backends need; it adds no methods of its own.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the working scalar type.
#[inline]
pub fn s<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant must convert to the scalar type")
}

/// Build a complex number from `f64` parts in the working scalar type.
#[inline]
pub fn cplx<S: Scalar>(re: f64, im: f64) -> num_complex::Complex<S> {
    num_complex::Complex::new(s(re), s(im))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_roundtrip_f32_and_f64() {
        let a: f32 = s(0.25);
        let b: f64 = s(0.25);
        assert_eq!(a, 0.25f32);
        assert_eq!(b, 0.25f64);
        let z = cplx::<f64>(1.0, -2.0);
        assert_eq!(z.re, 1.0);
        assert_eq!(z.im, -2.0);
    }
}

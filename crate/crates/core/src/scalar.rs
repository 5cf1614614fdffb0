//! Floating point abstraction used by the signal-processing and
//! classification code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// A real scalar the pipeline math can run on.
///
/// Implemented for `f32` and `f64`. Stage payloads always carry values as
/// IEEE-754 binary64, so every implementor must convert to and from `f64`
/// without loss for values it produced itself.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy-free widening used by the payload encoders.
    fn to_f64_lossless(self) -> f64;

    /// Narrowing used by the payload decoders.
    fn from_f64_lossy(v: f64) -> Self;

    /// Shorthand for constants in generic code.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trips_through_f64() {
        for v in [0.0f32, -1.5, 1e-30, f32::MAX, f32::MIN_POSITIVE] {
            assert_eq!(f32::from_f64_lossy(v.to_f64_lossless()), v);
        }
    }
}

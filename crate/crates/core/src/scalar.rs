//! Floating point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};

/// Real scalar the planning, elicitation and compression code is generic over.
///
/// Implemented for `f32` and `f64`. Tolerances are written as `f64` literals
/// and converted with [`Scalar::lit`]; on `f32` they are clamped from below by
/// a small multiple of machine epsilon so that checks stay meaningful.
pub trait Scalar: Float + FromPrimitive + NumCast + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Converts an `f64` constant into this scalar type.
    fn lit(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("f64 literal representable in scalar type")
    }

    /// A tolerance of `value`, but never tighter than 64 ulps at 1.
    fn tol(value: f64) -> Self {
        Self::lit(value).max(Self::epsilon() * Self::lit(64.0))
    }

    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

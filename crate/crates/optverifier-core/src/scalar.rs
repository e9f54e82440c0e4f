//! Scalar abstraction for the numeric kernel.
//!
//! Grounded models, the feasibility checker and the enumeration solver are
//! generic over the scalar type so the same kernel runs in `f32` or `f64`.
//! The pipeline uses the `f64` aliases exported from the crate root; model
//! JSON always deserializes through `f64` and converts at the grounding
//! boundary.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the grounding/solving/checking kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    /// Convert from `f64`, saturating through `NaN` on failure.
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    /// Convert to `f64` for printing and reporting.
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

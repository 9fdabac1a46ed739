//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type the solver can run on.
///
/// Everything numeric in the crate is written against this trait; `f64` is
/// the type used by the experiment drivers, `f32` is supported for the
/// linear-algebra core but finite-difference derivatives lose most of their
/// digits at single precision.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Machine epsilon of the type.
    fn epsilon() -> Self;

    /// Converts an `f64` literal, panicking only for non-representable input.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("integer representable in scalar type")
    }
}

impl Real for f64 {
    #[inline]
    fn epsilon() -> Self {
        f64::EPSILON
    }
}

impl Real for f32 {
    #[inline]
    fn epsilon() -> Self {
        f32::EPSILON
    }
}

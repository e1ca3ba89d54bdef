//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the library is generic over: `f32` or `f64`.
///
/// Tolerances throughout the crate are specified as `f64` literals and then
/// clamped from below by [`Real::tol_floor`], so that requests which are
/// meaningful in double precision degrade gracefully in single precision.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + Sum
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Values at or above this level are treated as `+inf` by the modular layer.
    fn saturation_cap() -> Self;

    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Lossy conversion used for error payloads and reports.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest relative tolerance worth asking for in this precision.
    #[inline]
    fn tol_floor() -> Self {
        Self::epsilon() * Self::lit(64.0)
    }

    /// `max(requested, tol_floor())`.
    #[inline]
    fn tol(requested: f64) -> Self {
        Self::lit(requested).max(Self::tol_floor())
    }

    #[inline]
    fn is_saturated(self) -> bool {
        !(self < Self::saturation_cap())
    }
}

impl Real for f32 {
    fn saturation_cap() -> Self {
        1e36
    }
}

impl Real for f64 {
    fn saturation_cap() -> Self {
        1e300
    }
}

/// Clamps overflowing or non-finite evaluations to the saturation sentinel.
#[inline]
pub(crate) fn saturate<T: Real>(v: T) -> T {
    if v.is_nan() || v >= T::saturation_cap() {
        T::saturation_cap()
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_floor_depends_on_precision() {
        assert_eq!(f64::tol(1e-10), 1e-10);
        assert!(f32::tol(1e-10) > 1e-6);
    }

    #[test]
    fn saturation_maps_overflow_and_nan() {
        assert_eq!(saturate(f64::INFINITY), f64::saturation_cap());
        assert_eq!(saturate(f64::NAN), f64::saturation_cap());
        assert_eq!(saturate(3.0_f64), 3.0);
        assert!(f32::saturation_cap().is_saturated());
    }
}

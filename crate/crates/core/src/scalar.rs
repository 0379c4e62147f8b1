//! Scalar abstraction shared by the numeric kernels.
//!
//! Everything that does linear algebra (geometry, preintegration, the closed-form
//! solver and the bias calibration) is written against [`Real`], so the same code
//! runs in `f32` for embedded-style experiments and in `f64` for the reference
//! pipeline. Simulation and Monte-Carlo code is `f64` only.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Default {
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon for the type.
    fn eps() -> Self;

    fn infinity() -> Self;
}

impl Real for f32 {
    #[inline]
    fn eps() -> Self {
        f32::EPSILON
    }

    #[inline]
    fn infinity() -> Self {
        f32::INFINITY
    }
}

impl Real for f64 {
    #[inline]
    fn eps() -> Self {
        f64::EPSILON
    }

    #[inline]
    fn infinity() -> Self {
        f64::INFINITY
    }
}

//! Scalar abstraction for the numeric core.
//!
//! Everything that does arithmetic is generic over [`Scalar`] so the same
//! code runs in `f32` for cheap scans and `f64` for production runs. The
//! trait is a thin bundle over `num_traits::Float`; the blanket impl covers
//! both built-in floats and any future type that satisfies the bounds.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};

pub trait Scalar:
    Float + FromPrimitive + AddAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal. Constants in this crate are
    /// written as `f64` and narrowed at the call site.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    /// Widening back to `f64`, used when feeding RNG thresholds and report
    /// formatting that must not depend on the working precision.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + AddAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

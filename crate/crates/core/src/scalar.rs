//! Floating-point scalar abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// A real scalar the ML kernels can run on: `f32` or `f64`.
///
/// Serialized model files always carry `f64`, so every scalar must widen to
/// `f64` losslessly and narrow back exactly for values it produced.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Tolerance-free conversion from an `f64` literal or stored value.
    fn of(x: f64) -> Self;

    fn widen(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn widen(self) -> f64 {
        self
    }
}

//! Scalar element trait shared by the f32 training path and the f64
//! gradient-check path.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Element type of all tensors. Training runs at `f32`; finite-difference
/// verification instantiates the same code at `f64`.
pub trait Elem:
    Float + FromPrimitive + NumAssign + Sum + Send + Sync + Copy + Debug + Display + Default + 'static
{
    fn as_f64(self) -> f64;
    fn as_f32(self) -> f32;
}

impl Elem for f32 {
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Elem for f64 {
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Shorthand for lossy literal conversion into the element type.
#[inline]
pub fn c<T: Elem>(x: f64) -> T {
    T::from_f64(x).expect("literal conversion")
}

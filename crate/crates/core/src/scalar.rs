use std::fmt::{Debug, Display};

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type of tensors, parameters and optimizer state.
///
/// Implemented for `f32` and `f64`. Matrix products go through the
/// `ndarray` GEMM kernels for both.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + LinalgScalar + Debug + Display + Default + Send + Sync + 'static
{
    fn cast_from(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lifting an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(v: f64) -> T {
    <T as Scalar>::cast_from(v)
}

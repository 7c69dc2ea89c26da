//! Scalar abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: f32 or f64.
pub trait Scalar: Float + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static {
    /// Lossless conversion from a small integer count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

//! Scalar abstraction: all real-valued math in this crate is generic over
//! [`Real`], instantiated as `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar: f32 or f64.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        num_traits::FromPrimitive::from_f64(v).unwrap()
    }

    fn of_usize(v: usize) -> Self {
        num_traits::FromPrimitive::from_usize(v).unwrap()
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

//! Floating-point abstraction for the numeric parts of the crate.
//!
//! The stationary solver and the metric computations are written against
//! [`Scalar`] so they run in `f32` or `f64`. The simulator itself counts
//! integer cycles and only converts at the reporting boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// floating point: f32 or f64
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; panics only for values the type cannot represent at all.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("value not representable in scalar type")
    }

    fn of_count(value: u64) -> Self {
        Self::from_u64(value).expect("count not representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

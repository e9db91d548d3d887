//! Scalar abstraction for spin values and clock times.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type used for spin values and ring times: `f32` or `f64`.
///
/// Uniform draws are produced in `f64` and narrowed with [`Scalar::from_f64_lossy`];
/// spin identity never depends on the scalar precision because equality is
/// decided by origin, not by value.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every supported scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("supported scalars convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

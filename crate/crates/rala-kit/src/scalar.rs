use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type for all matrix math: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy cast from f64, for constants and seeded random draws.
    fn from_config(x: f64) -> Self {
        Self::from_f64(x).expect("f64 -> scalar cast")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar -> f64 cast")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

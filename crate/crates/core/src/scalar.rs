use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of every tensor in the crate.
///
/// Implemented for `f32` and `f64`. Tests and gradient checks run in `f64`;
/// `f32` is available for faster full-size runs.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for literals and file input.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Short name written into checkpoints.
    fn dtype() -> &'static str;
}

impl Scalar for f32 {
    fn dtype() -> &'static str {
        "f32"
    }
}

impl Scalar for f64 {
    fn dtype() -> &'static str {
        "f64"
    }
}

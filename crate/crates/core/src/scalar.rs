//! Floating-point abstraction used by every numeric component.
//!
//! All math in this crate is written against [`Scalar`] so the same code runs
//! in `f32` (the training default) and `f64` (used by the gradient-check and
//! equivalence tests, where finite-difference noise in single precision would
//! drown the signal).

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for literals and config values.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Widen to `f64` for reporting and file formats.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

//! Floating point abstraction shared by the numeric kernels.
//!
//! Everything that is pure linear algebra (operators, eigensolver, spectral
//! distances, propagation, the pump loss and its analytic gradient) is written
//! against [`Scalar`] so it runs in `f32` or `f64`. Training through the tape
//! is `f64` only.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tolerance used to decide that a quantity is numerically zero.
    const TINY: Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const TINY: Self = 1e-12;
}

impl Scalar for f32 {
    const TINY: Self = 1e-6;
}

//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the renderer and solver are generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline(always)]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Widens to `f64` (lossless for `f32` and `f64`).
    #[inline(always)]
    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("finite float widens to f64")
    }

    /// Converts a count or index; exact below 2^24 (`f32`) or 2^53 (`f64`).
    fn from_usize_exact(n: usize) -> Self;

    /// Truncates a non-negative value to an index.
    fn to_index(self) -> usize;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline(always)]
            fn from_usize_exact(n: usize) -> Self {
                n as $t
            }

            #[inline(always)]
            fn to_index(self) -> usize {
                self as usize
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

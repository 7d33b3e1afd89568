//! Scalar abstraction: the numeric kernels are generic over `f32`/`f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps};

/// Floating point scalar used throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssignOps
    + Sum<Self>
    + Display
    + LowerExp
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal (tolerances, kernel parameters). Lossy for `f32`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    /// Convert an index or count.
    fn from_index(i: usize) -> Self {
        Self::from_usize(i).expect("index fits in scalar")
    }

    /// `sqrt(2/π)`, the normalization of the Dirichlet sine basis.
    fn basis_norm() -> Self {
        Self::FRAC_2_PI().sqrt()
    }
}

impl Real for f32 {}
impl Real for f64 {}

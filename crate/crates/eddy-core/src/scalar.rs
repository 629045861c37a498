use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssign};
use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point scalar the library is generic over.
///
/// Implemented for `f32` and `f64`. The experiment pipeline and all stated
/// tolerances assume `f64`; `f32` is supported for callers that trade
/// precision for footprint.
pub trait Scalar:
    Float + FloatConst + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Draws one standard-normal variate from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Converts an `f64` constant into this type.
    ///
    /// Panics only if the scalar type cannot represent ordinary finite
    /// literals, which does not happen for the provided impls.
    #[inline]
    fn real(x: f64) -> Self {
        Self::from(x).expect("finite literal must convert")
    }

    /// Lossy view of this value as `f64`, for reporting and p-values.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Scalar for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

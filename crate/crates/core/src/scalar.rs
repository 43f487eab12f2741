//! Floating-point scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

/// Floating point scalar: `f32` or `f64`.
///
/// Besides the arithmetic provided by [`Float`], implementors supply the log-gamma
/// function and the handful of samplers the crate needs, so that generic code never
/// has to carry `rand_distr` trait bounds around.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Natural log of the gamma function for positive arguments.
    fn ln_gamma(self) -> Self;

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from Student's t with `nu` degrees of freedom.
    fn sample_student_t<R: Rng + ?Sized>(rng: &mut R, nu: Self) -> Self;

    /// Uniform draw on `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $lgamma:path) => {
        impl Scalar for $t {
            #[inline]
            fn ln_gamma(self) -> Self {
                $lgamma(self)
            }

            #[inline]
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn sample_student_t<R: Rng + ?Sized>(rng: &mut R, nu: Self) -> Self {
                StudentT::new(nu).expect("degrees of freedom validated by caller").sample(rng)
            }

            #[inline]
            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }
        }
    };
}

impl_scalar!(f64, libm::lgamma);
impl_scalar!(f32, libm::lgammaf);

/// Convert an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Convert a count into `T`.
#[inline]
pub fn count<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

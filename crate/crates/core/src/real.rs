use core::fmt::Debug;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the engine can run in. Storage is `f32`; `f64` is used by
/// gradient oracles.
///
/// `exp_libm` / `ln_libm` always go through the `libm` crate. `Float::exp`
/// switches to the platform's libm whenever anything in the build enables
/// `num-traits/std`, which would make training results depend on the
/// dependency graph.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn from_f32(x: f32) -> Self;
    fn as_f32(self) -> f32;
    fn as_f64(self) -> f64;
    fn exp_libm(self) -> Self;
    fn ln_libm(self) -> Self;
}

impl Real for f32 {
    #[inline]
    fn exp_libm(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln_libm(self) -> Self {
        libm::logf(self)
    }
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn exp_libm(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln_libm(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

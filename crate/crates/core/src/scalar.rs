//! Scalar abstraction shared by the signal-processing core.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating-point type the operators, solver and metrics are generic over
/// (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; physical constants are kept in `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex sample over a [`Real`] scalar.
pub type Cx<T> = Complex<T>;

#[inline]
pub(crate) fn cx<T: Real>(re: f64, im: f64) -> Cx<T> {
    Complex::new(T::of(re), T::of(im))
}

/// Hermitian inner product `<a, b> = sum conj(a_i) b_i`.
pub fn dot<T: Real>(a: &[Cx<T>], b: &[Cx<T>]) -> Cx<T> {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}

pub fn norm_sqr<T: Real>(a: &[Cx<T>]) -> T {
    a.iter().map(|x| x.norm_sqr()).sum()
}

pub fn norm<T: Real>(a: &[Cx<T>]) -> T {
    norm_sqr(a).sqrt()
}

/// Upcast a complex slice to `f64`.
pub fn to_c64<T: Real>(a: &[Cx<T>]) -> Vec<Complex<f64>> {
    a.iter()
        .map(|z| Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy()))
        .collect()
}

/// Downcast a complex `f64` slice to `T`.
pub fn from_c64<T: Real>(a: &[Complex<f64>]) -> Vec<Cx<T>> {
    a.iter().map(|z| cx(z.re, z.im)).collect()
}

//! Floating-point abstraction shared by the numerical kernels.
//!
//! Metrics, graph mixing, the SIR rollout and the next-generation solve are
//! written against [`Scalar`] so they run unchanged in `f32` or `f64`. Data
//! ingestion and training stay in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into the scalar type.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn from_count(count: usize) -> Self {
        Self::from_usize(count).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else if x < T::lit(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`], the logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`softplus`] for strictly positive `y`.
#[inline]
pub fn softplus_inverse<T: Scalar>(y: T) -> T {
    if y > T::lit(30.0) {
        y
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_roundtrip() {
        for &y in &[1e-6, 0.1, 1.0, 5.0, 40.0] {
            let x = softplus_inverse(y);
            assert!((softplus(x) - y).abs() <= 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        for &x in &[-5.0f64, -0.3, 0.0, 0.7, 4.0] {
            let eps = 1e-6;
            let fd = (softplus(x + eps) - softplus(x - eps)) / (2.0 * eps);
            assert!((fd - sigmoid(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn generic_over_f32() {
        let y: f32 = softplus(0.0);
        assert!((y - std::f32::consts::LN_2).abs() < 1e-6);
    }
}

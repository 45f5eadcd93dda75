//! Scalar abstraction shared by the numerical modules.
//!
//! Everything that does network math is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. Trip ingestion and feature extraction
//! work in `f64` (they are measurement data); the conversion into the
//! network's scalar happens at the scaling boundary.

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; finite inputs always succeed for f32/f64.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar is representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ln(1 + e^x)`, evaluated without overflow for large `x`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    let zero = T::zero();
    // max(x, 0) + ln(1 + e^{-|x|})
    x.max(zero) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`], the logistic function.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Inverse of [`softplus`]: the `rho` with `softplus(rho) == sigma`.
pub fn softplus_inv<T: Scalar>(sigma: T) -> T {
    // ln(e^s - 1) = s + ln(1 - e^{-s})
    sigma + (-(-sigma).exp()).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(softplus(1000.0_f64), 1000.0);
        assert!(softplus(-1000.0_f64) >= 0.0);
        assert!((softplus(0.0_f64) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus(-30.0_f32) > 0.0);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for s in [1e-4, 0.05, 1.0, 7.5] {
            let rho: f64 = softplus_inv(s);
            assert!((softplus(rho) - s).abs() < 1e-12 * s.max(1.0));
        }
    }

    #[test]
    fn sigmoid_matches_softplus_slope() {
        for x in [-5.0, -0.3, 0.0, 2.0, 9.0] {
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-8);
        }
    }
}

//! Scalar abstraction shared by the numerical kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar the geometry, voxel and transform kernels are generic over.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Admissible deviation of `‖θ‖₂` from one for a unit direction.
    fn unit_tolerance() -> Self;

    /// Converts an `f64` literal. Every implementor represents all finite `f64`
    /// values (possibly rounded), so this never fails.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal is representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Real for f64 {
    #[inline]
    fn unit_tolerance() -> Self {
        1e-12
    }
}

impl Real for f32 {
    #[inline]
    fn unit_tolerance() -> Self {
        1e-6
    }
}

/// Compensated (Kahan–Babuška/Neumaier) accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    carry: T,
}

impl<T: Real> CompensatedSum<T> {
    pub fn new() -> Self {
        Self { sum: T::zero(), carry: T::zero() }
    }

    #[inline]
    pub fn add(&mut self, x: T) {
        let s = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - s) + x;
        } else {
            self.carry += (x - s) + self.sum;
        }
        self.sum = s;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_mass() {
        let mut acc = CompensatedSum::<f64>::new();
        for x in [1e16, 1.0, -1e16, 1.0] {
            acc.add(x);
        }
        assert_eq!(acc.value(), 2.0);
        let naive: f64 = [1e16, 1.0, -1e16, 1.0].iter().sum();
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn literal_conversion_for_both_widths() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert!(f32::unit_tolerance() > f64::unit_tolerance() as f32);
    }
}

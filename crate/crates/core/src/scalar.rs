//! Numeric abstraction for error rates.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Scalar type an error rate can be expressed in.
///
/// Only field operations are needed (rates are ratios of counts and means of
/// ratios), so both floats and exact rationals qualify.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    /// `num / den`. `den` must be non-zero.
    fn ratio(num: usize, den: usize) -> Self {
        debug_assert!(den > 0);
        Self::from_count(num) / Self::from_count(den)
    }

    /// Lossy view used for display and CSV output.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
impl Scalar for num_rational::Rational64 {}

/// Arithmetic mean of a non-empty sequence.
pub fn mean<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for v in values {
        sum = sum + v;
        n += 1;
    }
    (n > 0).then(|| sum / T::from_count(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn ratio_is_exact_for_rationals() {
        let r = Rational64::ratio(2, 3);
        assert_eq!(r, Rational64::new(2, 3));
        assert_eq!(r.to_f64_lossy(), 2.0 / 3.0);
    }

    #[test]
    fn mean_of_empty_is_none() {
        assert_eq!(mean::<f64>([]), None);
        assert_eq!(mean([0.5f64, 1.5]), Some(1.0));
        assert_eq!(
            mean([Rational64::new(1, 3), Rational64::new(2, 3)]),
            Some(Rational64::new(1, 2))
        );
    }
}

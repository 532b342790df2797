use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Signed, ToPrimitive};

/// Number type used for every reward and probability computation.
///
/// Floating-point types compare with relative tolerances; exact types
/// (rationals) compare with zero slack.
pub trait Scalar: Num + Signed + Clone + PartialOrd + Debug + Send + Sync + 'static {
    const EXACT: bool;

    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn floor(&self) -> Self;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    /// Tolerance `rel * (1 + |scale|)`, or zero for exact types.
    fn tol(rel: f64, scale: &Self) -> Self {
        if Self::EXACT {
            Self::zero()
        } else {
            Self::from_f64(rel) * (Self::one() + scale.abs())
        }
    }

    /// Absolute slack, zero for exact types.
    fn slack(abs: f64) -> Self {
        if Self::EXACT {
            Self::zero()
        } else {
            Self::from_f64(abs)
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn floor(&self) -> Self {
        f64::floor(*self)
    }
    fn from_usize(n: usize) -> Self {
        n as f64
    }
}

impl Scalar for f32 {
    const EXACT: bool = false;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
    fn floor(&self) -> Self {
        f32::floor(*self)
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite value")
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn floor(&self) -> Self {
        BigRational::floor(self)
    }
    fn from_usize(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
}

/// `a <= b` up to a relative tolerance on the larger magnitude.
pub fn approx_le<S: Scalar>(a: &S, b: &S, rel: f64) -> bool {
    let scale = if a.abs() > b.abs() { a.abs() } else { b.abs() };
    a.clone() <= b.clone() + S::tol(rel, &scale)
}

pub fn approx_eq<S: Scalar>(a: &S, b: &S, rel: f64) -> bool {
    approx_le(a, b, rel) && approx_le(b, a, rel)
}

pub fn max_of<S: Scalar>(a: S, b: S) -> S {
    if b > a {
        b
    } else {
        a
    }
}

/// Converts a decimal literal such as `0.3` into an exact rational `3/10`
/// instead of the nearest binary fraction.
pub fn rational_from_decimal(x: f64) -> BigRational {
    let s = format!("{x}");
    match s.split_once('.') {
        None => BigRational::from_integer(s.parse::<BigInt>().expect("integer literal")),
        Some((int, frac)) => {
            let digits: BigInt = format!("{int}{frac}").parse().expect("decimal literal");
            let den = num_traits::pow(BigInt::from(10), frac.len());
            BigRational::new(digits, den)
        }
    }
}

pub fn is_zero<S: Scalar>(x: &S) -> bool {
    x.is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;

    #[test]
    fn exact_types_have_zero_tolerance() {
        let one = BigRational::from_usize(1);
        assert!(BigRational::tol(1e-9, &one).is_zero());
        assert!(f64::tol(1e-9, &1.0) > 0.0);
    }

    #[test]
    fn decimal_literals_are_exact() {
        let r = rational_from_decimal(0.3);
        assert_eq!(r, BigRational::new(BigInt::from(3), BigInt::from(10)));
        assert_eq!(rational_from_decimal(2.0), BigRational::from_usize(2));
    }

    #[test]
    fn approx_le_respects_scale() {
        assert!(approx_le(&(1.0 + 1e-12), &1.0, 1e-9));
        assert!(!approx_le(&1.1, &1.0, 1e-9));
        let a = BigRational::from_usize(3);
        let b = BigRational::from_usize(2);
        assert!(!approx_le(&a, &b, 1e-9));
    }
}

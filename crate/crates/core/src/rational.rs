//! Exact rational arithmetic. All probabilities, densities, and point
//! locations in the core are `Rational`; floating point is confined to
//! p-value computation in the lab crate.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = num_rational::BigRational;

pub fn rat_i64(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_u64(n: u64, d: u64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn zero() -> Rational {
    Rational::zero()
}

pub fn one() -> Rational {
    Rational::one()
}

pub fn half() -> Rational {
    rat_i64(1, 2)
}

/// 2^-k as an exact rational.
pub fn pow2_neg(k: u32) -> Rational {
    Rational::new(BigInt::one(), BigInt::one() << k)
}

/// Formats as "num/den" ("num" alone when the denominator is 1).
pub fn to_fraction_string(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses "num/den" or a bare integer. Rejects zero denominators.
pub fn parse_fraction(s: &str) -> Result<Rational> {
    let s = s.trim();
    let (num_s, den_s) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let num: BigInt = num_s
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("malformed fraction {s:?}")))?;
    let den: BigInt = den_s
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("malformed fraction {s:?}")))?;
    if den.is_zero() {
        return Err(Error::InvalidConfig(format!(
            "malformed fraction {s:?}: zero denominator"
        )));
    }
    Ok(Rational::new(num, den))
}

pub fn is_proper_probability(r: &Rational) -> bool {
    !r.is_negative() && *r <= one()
}

pub fn strictly_inside_unit(r: &Rational) -> bool {
    r.is_positive() && *r < one()
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// A closed interval with exact rational endpoints, `lo <= hi`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    pub lo: Rational,
    pub hi: Rational,
}

impl Interval {
    pub fn new(lo: Rational, hi: Rational) -> Self {
        debug_assert!(lo <= hi);
        Interval { lo, hi }
    }

    pub fn point(v: Rational) -> Self {
        Interval { lo: v.clone(), hi: v }
    }

    pub fn width(&self) -> Rational {
        &self.hi - &self.lo
    }

    pub fn contains(&self, v: &Rational) -> bool {
        self.lo <= *v && *v <= self.hi
    }

    /// True when every point of `self` is strictly below every point of `other`.
    pub fn strictly_below(&self, other: &Interval) -> bool {
        self.hi < other.lo
    }

    /// Interval product for non-negative intervals.
    pub fn product_nonneg(&self, other: &Interval) -> Interval {
        debug_assert!(!self.lo.is_negative() && !other.lo.is_negative());
        Interval::new(&self.lo * &other.lo, &self.hi * &other.hi)
    }

    /// The complement 1 - x, exact.
    pub fn complement(&self) -> Interval {
        Interval::new(one() - &self.hi, one() - &self.lo)
    }

    /// Image of the bilinear XOR-convolution a+b-2ab over two probability
    /// intervals. Extrema of a bilinear map on a rectangle sit at corners.
    pub fn xor_convolve(&self, other: &Interval) -> Interval {
        let corners = [
            xor_prob(&self.lo, &other.lo),
            xor_prob(&self.lo, &other.hi),
            xor_prob(&self.hi, &other.lo),
            xor_prob(&self.hi, &other.hi),
        ];
        let mut lo = corners[0].clone();
        let mut hi = corners[0].clone();
        for c in &corners[1..] {
            if *c < lo {
                lo = c.clone();
            }
            if *c > hi {
                hi = c.clone();
            }
        }
        Interval::new(lo, hi)
    }
}

/// P(A xor B = 1) for independent bits with P(A=1)=a, P(B=1)=b.
pub fn xor_prob(a: &Rational, b: &Rational) -> Rational {
    a + b - rat_i64(2, 1) * a * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_round_trip() {
        let r = rat_i64(-7, 12);
        assert_eq!(parse_fraction(&to_fraction_string(&r)).unwrap(), r);
        assert_eq!(to_fraction_string(&rat_i64(4, 2)), "2");
    }

    #[test]
    fn zero_denominator_rejected() {
        assert!(matches!(
            parse_fraction("3/0"),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn xor_convolve_corners() {
        let a = Interval::new(rat_i64(1, 4), rat_i64(1, 2));
        let b = Interval::point(half());
        let c = a.xor_convolve(&b);
        // XOR with a fair bit is fair no matter what.
        assert_eq!(c, Interval::point(half()));
    }

    #[test]
    fn interval_product() {
        let a = Interval::new(rat_i64(1, 2), rat_i64(3, 4));
        let b = Interval::new(rat_i64(1, 3), rat_i64(2, 3));
        let p = a.product_nonneg(&b);
        assert_eq!(p.lo, rat_i64(1, 6));
        assert_eq!(p.hi, half());
    }
}

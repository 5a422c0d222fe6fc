//! Exact rational arithmetic for every value that feeds a pruning or
//! optimality decision.
//!
//! Backed by `Ratio<i128>` with checked operations: an overflow panics
//! instead of silently wrapping, so a comparison can never be decided on a
//! corrupted value.

use std::cmp::Ordering;
use std::fmt;
use std::iter::{Product, Sum};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational(Ratio<i128>);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid rational literal `{0}`")]
pub struct ParseRationalError(pub String);

const OVERFLOW: &str = "exact rational arithmetic overflowed i128";

impl Rational {
    pub const ZERO: Rational = Rational(Ratio::new_raw(0, 1));
    pub const ONE: Rational = Rational(Ratio::new_raw(1, 1));

    pub fn new(numer: i128, denom: i128) -> Rational {
        assert!(denom != 0, "zero denominator");
        Rational(Ratio::new(numer, denom))
    }

    pub fn from_int(v: i128) -> Rational {
        Rational(Ratio::from_integer(v))
    }

    pub fn numer(&self) -> i128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i128 {
        *self.0.denom()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.numer() < 0
    }

    pub fn is_positive(&self) -> bool {
        self.numer() > 0
    }

    pub fn ceil(&self) -> Rational {
        Rational(self.0.ceil())
    }

    pub fn floor(&self) -> Rational {
        Rational(self.0.floor())
    }

    pub fn recip(&self) -> Rational {
        assert!(!self.is_zero(), "reciprocal of zero");
        Rational(self.0.recip())
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Integer value, if this is an integer that fits `u128`.
    pub fn to_u128(&self) -> Option<u128> {
        if self.is_integer() && self.numer() >= 0 {
            Some(self.numer() as u128)
        } else {
            None
        }
    }

    pub fn max(self, other: Rational) -> Rational {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: Rational) -> Rational {
        if other < self {
            other
        } else {
            self
        }
    }

    /// Decimal rendering with `digits` fractional digits, rounded half away
    /// from zero. Used only for human-facing output.
    pub fn to_decimal_string(&self, digits: u32) -> String {
        let scale = 10i128.pow(digits);
        let scaled = self.0 * Ratio::from_integer(scale);
        let rounded = scaled.round().to_integer();
        let sign = if rounded < 0 { "-" } else { "" };
        let abs = rounded.unsigned_abs();
        let int_part = abs / scale as u128;
        let frac_part = abs % scale as u128;
        if digits == 0 {
            format!("{sign}{int_part}")
        } else {
            format!(
                "{sign}{int_part}.{frac_part:0width$}",
                width = digits as usize
            )
        }
    }
}

impl From<u64> for Rational {
    fn from(v: u64) -> Rational {
        Rational::from_int(v as i128)
    }
}

impl From<u128> for Rational {
    fn from(v: u128) -> Rational {
        Rational::from_int(i128::try_from(v).expect(OVERFLOW))
    }
}

impl From<i64> for Rational {
    fn from(v: i64) -> Rational {
        Rational::from_int(v as i128)
    }
}

impl Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        Rational(self.0.checked_add(&rhs.0).expect(OVERFLOW))
    }
}

impl Sub for Rational {
    type Output = Rational;
    fn sub(self, rhs: Rational) -> Rational {
        Rational(self.0.checked_sub(&rhs.0).expect(OVERFLOW))
    }
}

impl Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        Rational(self.0.checked_mul(&rhs.0).expect(OVERFLOW))
    }
}

impl Div for Rational {
    type Output = Rational;
    fn div(self, rhs: Rational) -> Rational {
        assert!(!rhs.is_zero(), "division by zero");
        Rational(self.0.checked_div(&rhs.0).expect(OVERFLOW))
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::ZERO, |a, b| a + b)
    }
}

impl Product for Rational {
    fn product<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::ONE, |a, b| a * b)
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Rational) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Rational) -> Ordering {
        // Cross-multiplication in i128 can overflow for large operands; the
        // library comparison goes through floor/remainder and never does.
        self.0.cmp(&other.0)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Accepts `7`, `-3/4`, and plain decimals such as `0.125`.
impl FromStr for Rational {
    type Err = ParseRationalError;

    fn from_str(s: &str) -> Result<Rational, ParseRationalError> {
        let err = || ParseRationalError(s.to_string());
        let t = s.trim();
        if t.is_empty() {
            return Err(err());
        }
        if let Some((n, d)) = t.split_once('/') {
            let n: i128 = n.trim().parse().map_err(|_| err())?;
            let d: i128 = d.trim().parse().map_err(|_| err())?;
            if d == 0 {
                return Err(err());
            }
            return Ok(Rational::new(n, d));
        }
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(int_part) || !all_digits(frac_part) || frac_part.len() > 30 {
            return Err(err());
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i128 = if digits.is_empty() {
            0
        } else {
            digits.parse().map_err(|_| err())?
        };
        let denom = 10i128
            .checked_pow(frac_part.len() as u32)
            .ok_or_else(err)?;
        let value = Rational::new(numer, denom);
        Ok(if neg { -value } else { value })
    }
}

/// Ceiling division of nonnegative integers.
pub fn ceil_div(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

/// Least common multiple of the denominators of `values`.
pub fn common_denominator<'a>(values: impl IntoIterator<Item = &'a Rational>) -> i128 {
    values
        .into_iter()
        .fold(1i128, |acc, v| acc.lcm(&v.denom()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_literal_forms() {
        assert_eq!("7".parse::<Rational>().unwrap(), Rational::from_int(7));
        assert_eq!("-3/6".parse::<Rational>().unwrap(), Rational::new(-1, 2));
        assert_eq!("0.125".parse::<Rational>().unwrap(), Rational::new(1, 8));
        assert_eq!("2.".parse::<Rational>().unwrap(), Rational::from_int(2));
        assert_eq!(".5".parse::<Rational>().unwrap(), Rational::new(1, 2));
        assert!("1/0".parse::<Rational>().is_err());
        assert!("abc".parse::<Rational>().is_err());
        assert!("1e5".parse::<Rational>().is_err());
        assert!("".parse::<Rational>().is_err());
    }

    #[test]
    fn display_and_decimal() {
        assert_eq!(Rational::new(7, 3).to_string(), "7/3");
        assert_eq!(Rational::from_int(12).to_string(), "12");
        assert_eq!(Rational::new(7, 3).to_decimal_string(4), "2.3333");
        assert_eq!(Rational::new(-1, 8).to_decimal_string(2), "-0.13");
    }

    #[test]
    #[should_panic(expected = "overflowed")]
    fn overflow_panics() {
        let big = Rational::from_int(i128::MAX / 2);
        let _ = big * Rational::from_int(4);
    }

    #[test]
    fn ordering_is_exact() {
        let a = Rational::new(1, 3);
        let b = Rational::new(333_333_333_333, 1_000_000_000_000);
        assert!(a > b);
        assert_eq!(common_denominator(&[a, Rational::new(1, 4)]), 12);
    }
}

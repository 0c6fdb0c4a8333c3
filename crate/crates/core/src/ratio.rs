//! Exact fractions for split sizes, so counts never depend on float rounding.

use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const DECIMAL_DEN: u64 = 1_000_000_000;

/// A rational number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    num: u64,
    den: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("fraction {0} outside [0, 1]")]
pub struct FractionOutOfRange(pub f64);

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fraction {
    pub const ZERO: Fraction = Fraction { num: 0, den: 1 };
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, FractionOutOfRange> {
        if den == 0 || num > den {
            return Err(FractionOutOfRange(if den == 0 {
                f64::NAN
            } else {
                num as f64 / den as f64
            }));
        }
        let g = gcd(num, den).max(1);
        Ok(Fraction {
            num: num / g,
            den: den / g,
        })
    }

    /// Interprets `x` as a decimal with up to nine fractional digits.
    pub fn from_f64(x: f64) -> Result<Self, FractionOutOfRange> {
        if !x.is_finite() || !(0.0..=1.0).contains(&x) {
            return Err(FractionOutOfRange(x));
        }
        let num = libm::round(x * DECIMAL_DEN as f64) as u64;
        Fraction::new(num, DECIMAL_DEN)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(self · n)`
    pub fn floor_mul(self, n: usize) -> usize {
        ((n as u128 * self.num as u128) / self.den as u128) as usize
    }

    /// `self · n` rounded half up.
    pub fn round_mul(self, n: usize) -> usize {
        ((2 * n as u128 * self.num as u128 + self.den as u128) / (2 * self.den as u128)) as usize
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let x = f64::deserialize(deserializer)?;
        Fraction::from_f64(x).map_err(serde::de::Error::custom)
    }
}

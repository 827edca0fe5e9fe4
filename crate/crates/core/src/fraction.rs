//! Small exact fractions used for configuration values (gains, learning
//! rates, initial weights). Written as `"n/d"` or a bare integer in files.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: i64,
    den: u64,
}

impl Fraction {
    /// `num/den` in lowest terms. Panics if `den == 0`.
    pub fn new(num: i64, den: u64) -> Self {
        assert!(den != 0, "zero denominator");
        let g = num_integer::gcd(num.unsigned_abs(), den).max(1);
        Fraction {
            num: num / g as i64,
            den: den / g,
        }
    }

    pub fn integer(n: i64) -> Self {
        Fraction { num: n, den: 1 }
    }

    pub fn numer(&self) -> i64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn is_positive(&self) -> bool {
        self.num > 0
    }

    pub fn to_big(&self) -> BigRational {
        BigRational::new(BigInt::from(self.num), BigInt::from(self.den))
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `self · x`, truncated toward zero.
    pub fn scale_truncate(&self, x: i64) -> i64 {
        let p = self.num as i128 * x as i128;
        let q = p / self.den as i128;
        q.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Fraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid fraction `{s}` (expected `n` or `n/d`)");
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let num: i64 = n.parse().map_err(|_| bad())?;
        let den: u64 = d.parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        Ok(Fraction::new(num, den))
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(n) => Ok(Fraction::integer(n)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_reduce() {
        assert_eq!("2/4".parse::<Fraction>().unwrap(), Fraction::new(1, 2));
        assert_eq!("-3".parse::<Fraction>().unwrap(), Fraction::integer(-3));
        assert!("1/0".parse::<Fraction>().is_err());
        assert!("x".parse::<Fraction>().is_err());
        assert_eq!(Fraction::new(6, 4).to_string(), "3/2");
        let f: Fraction = serde_json::from_str("3").unwrap();
        assert_eq!(f, Fraction::integer(3));
        let f: Fraction = serde_json::from_str("\"1/10\"").unwrap();
        assert_eq!(serde_json::to_string(&f).unwrap(), "\"1/10\"");
    }

    #[test]
    fn truncation_is_toward_zero() {
        let half = Fraction::new(1, 2);
        assert_eq!(half.scale_truncate(5), 2);
        assert_eq!(half.scale_truncate(-5), -2);
        assert_eq!(half.scale_truncate(-6), -3);
    }
}

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A percentage fixed at two decimals, stored in basis points
/// (`7512` is 75.12%). Serializes as the string `"75.12"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(u32);

impl Percent {
    pub const ZERO: Percent = Percent(0);
    pub const HUNDRED: Percent = Percent(10_000);

    pub fn from_basis_points(bp: u32) -> Self {
        Self(bp)
    }

    pub fn basis_points(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 100.0
    }

    /// `100 × frac`, rounded half-up to two decimals. `frac` must be in
    /// `[0, 1]`.
    pub fn from_fraction(frac: &BigRational) -> Self {
        assert!(!frac.is_negative() && *frac <= BigRational::from_integer(1.into()), "fraction out of range: {frac}");
        // floor(10000·frac + 1/2)
        let scaled = frac * BigRational::from_integer(BigInt::from(10_000)) + BigRational::new(1.into(), 2.into());
        Self(scaled.floor().to_integer().to_u32().expect("at most 10000"))
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl FromStr for Percent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("`{s}` is not a percentage with two decimals");
        let (whole, frac) = s.split_once('.').ok_or_else(bad)?;
        if frac.len() != 2 || whole.is_empty() || !whole.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let bp = whole.parse::<u32>().map_err(|_| bad())? * 100 + frac.parse::<u32>().map_err(|_| bad())?;
        if bp > 10_000 {
            return Err(bad());
        }
        Ok(Self(bp))
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

//! Exact rational scalars used during geometry construction.
//!
//! All membership tests on box boundaries are decided in `Ratio<i128>` so
//! that a vertex sitting exactly on a face is classified the same way on
//! every run, independent of floating-point rounding.

use num::rational::Ratio;
use num::{One, Signed, Zero};
use serde::de::{self, Deserializer};
use serde::Deserialize;

use crate::error::Error;

/// Exact rational scalar. `i128` components keep cross-multiplied
/// comparisons safe for dyadic coordinates down to `2^-60`.
pub type Rat = Ratio<i128>;

/// Convert a finite `f64` to the exact rational it represents.
///
/// Fails for non-finite input and for exponents outside `±96`, which do not
/// occur in sane domain descriptions and would overflow `i128` arithmetic
/// after a couple of products.
pub fn rat_from_f64(x: f64) -> Result<Rat, Error> {
    if !x.is_finite() {
        return Err(Error::Config(format!("non-finite coordinate {x}")));
    }
    if x == 0.0 {
        return Ok(Rat::zero());
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { -1i128 } else { 1i128 };
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    // Normal numbers only; subnormals fall outside the exponent guard anyway.
    let (mantissa, exp) = if biased == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), biased - 1075)
    };
    let mut m = mantissa as i128;
    let mut e = exp;
    while m % 2 == 0 && m != 0 {
        m /= 2;
        e += 1;
    }
    if e.abs() > 96 {
        return Err(Error::Config(format!("coordinate {x} has extreme scale")));
    }
    let r = if e >= 0 {
        Rat::from_integer(sign * m * (1i128 << e))
    } else {
        Rat::new(sign * m, 1i128 << (-e))
    };
    Ok(r)
}

/// `2^-j` as an exact rational.
pub fn dyadic(j: u32) -> Rat {
    Rat::new(1, 1i128 << j)
}

pub fn rat_to_f64(r: Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Smallest integer `n` with `n >= r`.
pub fn rat_ceil(r: Rat) -> i128 {
    let floor = r.numer().div_euclid(*r.denom());
    if r.is_integer() {
        floor
    } else {
        floor + 1
    }
}

/// Largest integer `n` with `n <= r`.
pub fn rat_floor(r: Rat) -> i128 {
    r.numer().div_euclid(*r.denom())
}

/// Rational deserialized from either a JSON number (taken as the exact f64
/// value, so dyadics round-trip) or a string `"p/q"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct JsonRat(pub Rat);

impl<'de> Deserialize<'de> for JsonRat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => rat_from_f64(x).map(JsonRat).map_err(de::Error::custom),
            Raw::Str(s) => parse_fraction(&s).map(JsonRat).map_err(de::Error::custom),
        }
    }
}

impl serde::Serialize for JsonRat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_integer() {
            s.serialize_i64(*self.0.numer() as i64)
        } else {
            s.serialize_str(&format!("{}/{}", self.0.numer(), self.0.denom()))
        }
    }
}

fn parse_fraction(s: &str) -> Result<Rat, Error> {
    let bad = || Error::Config(format!("cannot parse rational {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let p: i128 = p.trim().parse().map_err(|_| bad())?;
        let q: i128 = q.trim().parse().map_err(|_| bad())?;
        if q == 0 {
            return Err(bad());
        }
        Ok(Rat::new(p, q))
    } else {
        let p: i128 = s.trim().parse().map_err(|_| bad())?;
        Ok(Rat::from_integer(p))
    }
}

/// Exact absolute value helper for symmetry with the float path.
pub fn rat_abs(r: Rat) -> Rat {
    r.abs()
}

pub fn rat_one() -> Rat {
    Rat::one()
}

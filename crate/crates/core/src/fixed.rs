//! Exact non-negative fixed-point arithmetic in millionths.
//!
//! Refresh budgets accumulate fractional amounts per request over millions of
//! requests; floating point would drift, so every budget value is an integer
//! count of millionths.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

const SCALE: i64 = 1_000_000;

/// A non-negative rational with six decimal places, stored exactly.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(i64);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FixedError {
    #[error("value must be a finite non-negative number, got {0}")]
    OutOfRange(f64),
    #[error("value {0} exceeds the representable range")]
    Overflow(f64),
}

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(SCALE);

    pub fn from_int(v: u32) -> Fixed {
        Fixed(i64::from(v) * SCALE)
    }

    /// Exact constructor from a raw count of millionths.
    pub fn from_micros(micros: i64) -> Fixed {
        assert!(micros >= 0, "Fixed is non-negative");
        Fixed(micros)
    }

    /// Rounds to the nearest millionth. Rejects negatives, NaN, infinities.
    pub fn try_from_f64(v: f64) -> Result<Fixed, FixedError> {
        if !v.is_finite() || v < 0.0 {
            return Err(FixedError::OutOfRange(v));
        }
        let scaled = (v * SCALE as f64).round();
        if scaled > i64::MAX as f64 / 2.0 {
            return Err(FixedError::Overflow(v));
        }
        Ok(Fixed(scaled as i64))
    }

    pub fn micros(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Removes and returns the integral part, leaving only the fraction.
    pub fn take_floor(&mut self) -> u64 {
        let whole = self.0 / SCALE;
        self.0 -= whole * SCALE;
        whole as u64
    }

    pub fn checked_add(self, rhs: Fixed) -> Option<Fixed> {
        self.0.checked_add(rhs.0).map(Fixed)
    }
}

impl std::ops::Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        self.checked_add(rhs).expect("Fixed overflow")
    }
}

impl std::ops::AddAssign for Fixed {
    fn add_assign(&mut self, rhs: Fixed) {
        *self = *self + rhs;
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / SCALE;
        let frac = self.0 % SCALE;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:06}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fixed({self})")
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

struct FixedVisitor;

impl Visitor<'_> for FixedVisitor {
    type Value = Fixed;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a non-negative number")
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Fixed, E> {
        if v < 0 {
            return Err(E::custom("negative value"));
        }
        v.checked_mul(SCALE)
            .map(Fixed)
            .ok_or_else(|| E::custom("value too large"))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Fixed, E> {
        i64::try_from(v)
            .ok()
            .and_then(|v| v.checked_mul(SCALE))
            .map(Fixed)
            .ok_or_else(|| E::custom("value too large"))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Fixed, E> {
        Fixed::try_from_f64(v).map_err(E::custom)
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Fixed, D::Error> {
        d.deserialize_any(FixedVisitor)
    }
}

/// Accumulates a fixed step per event and pays out whole units as they
/// complete. The fractional remainder carries; paid-out units do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollingSum {
    step: Fixed,
    acc: Fixed,
}

impl RollingSum {
    pub fn new(step: Fixed) -> RollingSum {
        RollingSum {
            step,
            acc: Fixed::ZERO,
        }
    }

    pub fn step(&self) -> Fixed {
        self.step
    }

    /// Current fractional remainder.
    pub fn residue(&self) -> Fixed {
        self.acc
    }

    /// Adds one step and returns how many whole units are now due.
    pub fn advance(&mut self) -> u64 {
        self.acc += self.step;
        self.acc.take_floor()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_millionths() {
        assert_eq!(Fixed::try_from_f64(0.25).unwrap().micros(), 250_000);
        assert_eq!(Fixed::try_from_f64(0.3).unwrap().micros(), 300_000);
        assert_eq!(Fixed::try_from_f64(2.0).unwrap(), Fixed::from_int(2));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Fixed::try_from_f64(-0.1).is_err());
        assert!(Fixed::try_from_f64(f64::NAN).is_err());
        assert!(Fixed::try_from_f64(f64::INFINITY).is_err());
    }

    #[test]
    fn take_floor_keeps_fraction() {
        let mut v = Fixed::try_from_f64(2.75).unwrap();
        assert_eq!(v.take_floor(), 2);
        assert_eq!(v, Fixed::try_from_f64(0.75).unwrap());
        assert_eq!(v.take_floor(), 0);
    }

    #[test]
    fn half_step_pays_every_second_advance() {
        let mut sum = RollingSum::new(Fixed::try_from_f64(0.5).unwrap());
        assert_eq!(sum.advance(), 0);
        assert_eq!(sum.advance(), 1);
        assert_eq!(sum.residue(), Fixed::ZERO);
        assert_eq!(sum.advance(), 0);
        assert_eq!(sum.advance(), 1);
    }

    #[test]
    fn point_three_step_is_exact_over_many_advances() {
        let mut sum = RollingSum::new(Fixed::try_from_f64(0.3).unwrap());
        let total: u64 = (0..10_000).map(|_| sum.advance()).sum();
        assert_eq!(total, 3_000);
        assert_eq!(sum.residue(), Fixed::ZERO);
    }

    #[test]
    fn payout_plus_residue_equals_step_times_count() {
        for step in [0.0, 0.25, 0.3, 0.7, 1.0, 1.5, 2.0] {
            let step = Fixed::try_from_f64(step).unwrap();
            let mut sum = RollingSum::new(step);
            let rounds: i64 = 99_991;
            let paid: u64 = (0..rounds).map(|_| sum.advance()).sum();
            let expected = i128::from(step.micros()) * i128::from(rounds);
            let got = i128::from(paid) * 1_000_000 + i128::from(sum.residue().micros());
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn display_trims_zeros() {
        assert_eq!(Fixed::try_from_f64(0.25).unwrap().to_string(), "0.25");
        assert_eq!(Fixed::from_int(2).to_string(), "2");
        assert_eq!(Fixed::try_from_f64(1.000001).unwrap().to_string(), "1.000001");
    }
}

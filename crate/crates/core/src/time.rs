//! Microsecond-grid time types.
//!
//! Every duration and timestamp in the crate is held as integer microseconds
//! so that analytic predictions and simulated traces compare exactly.
//! Fractional intermediate values (clock drift, traffic coefficients) are
//! evaluated as exact rationals and rounded half-up at the microsecond grid.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

pub const MICROS_PER_SEC: u64 = 1_000_000;

/// A non-negative duration in integer microseconds.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug, Serialize, Deserialize,
)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn from_secs(secs: u64) -> Self {
        Micros(secs * MICROS_PER_SEC)
    }

    pub fn from_millis(millis: u64) -> Self {
        Micros(millis * 1_000)
    }

    /// Parse a decimal-seconds value (as found in scenario files) onto the
    /// microsecond grid, rounding to nearest.
    pub fn from_secs_f64(secs: f64) -> Self {
        debug_assert!(secs >= 0.0);
        Micros((secs * MICROS_PER_SEC as f64).round() as u64)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// `self * num / den`, rounded half-up. Panics on a zero denominator.
    pub fn scale(self, num: u64, den: u64) -> Micros {
        assert!(den > 0, "zero denominator");
        let v = self.0 as u128 * num as u128;
        Micros(((2 * v + den as u128) / (2 * den as u128)) as u64)
    }

    pub fn saturating_sub(self, other: Micros) -> Micros {
        Micros(self.0.saturating_sub(other.0))
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0.checked_sub(rhs.0).expect("negative duration"))
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", fmt_secs(self.0))
    }
}

/// An instant on some clock, in integer microseconds since that clock's zero.
///
/// Both the simulation's reference timeline and per-node local clocks use
/// this type; which clock a value belongs to is contextual.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug, Serialize, Deserialize,
)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    /// Signed difference `self - other` in microseconds.
    pub fn delta(self, other: SimTime) -> i64 {
        self.0 as i64 - other.0 as i64
    }
}

impl Add<Micros> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: Micros) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub<Micros> for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: Micros) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("time before epoch"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", fmt_secs(self.0))
    }
}

/// Format microseconds as fixed-point decimal seconds (`12.345678`).
///
/// Integer formatting keeps CSV output byte-stable across runs and platforms.
pub fn fmt_secs(micros: u64) -> String {
    format!("{}.{:06}", micros / MICROS_PER_SEC, micros % MICROS_PER_SEC)
}

/// Round a non-negative exact rational of microseconds half-up to the grid.
pub fn round_ratio_half_up(r: Ratio<i128>) -> u64 {
    let num = r.numer();
    let den = r.denom();
    assert!(*den > 0 && *num >= 0, "negative duration");
    ((2 * num + den) / (2 * den)) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_rounds_half_up() {
        // 1/3 us truncates, 1/2 us rounds up
        assert_eq!(Micros(1).scale(1, 3).0, 0);
        assert_eq!(Micros(1).scale(1, 2).0, 1);
        assert_eq!(Micros(15_000_000).scale(1, 4).0, 3_750_000);
    }

    #[test]
    fn fixed_point_seconds() {
        assert_eq!(fmt_secs(12_345_678), "12.345678");
        assert_eq!(fmt_secs(0), "0.000000");
        assert_eq!(fmt_secs(1_000_000), "1.000000");
    }

    #[test]
    fn ratio_rounding() {
        assert_eq!(round_ratio_half_up(Ratio::new(7, 2)), 4);
        assert_eq!(round_ratio_half_up(Ratio::new(10, 3)), 3);
        assert_eq!(round_ratio_half_up(Ratio::new(0, 1)), 0);
    }
}

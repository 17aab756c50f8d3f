use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Resolution of fractional counts: one token is `SCALE` units.
pub const SCALE: i64 = 1_000_000;

/// A fractional count stored in fixed point so that GPU promotions are
/// removed exactly as they were added.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mass(i64);

impl Mass {
    pub const ZERO: Mass = Mass(0);
    pub const ONE: Mass = Mass(SCALE);

    /// Rounds to the nearest representable amount.
    pub fn from_f64(x: f64) -> Mass {
        Mass((x * SCALE as f64).round() as i64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn raw(self) -> i64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Debug for Mass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Add for Mass {
    type Output = Mass;
    fn add(self, o: Mass) -> Mass {
        Mass(self.0 + o.0)
    }
}

impl Sub for Mass {
    type Output = Mass;
    fn sub(self, o: Mass) -> Mass {
        Mass(self.0 - o.0)
    }
}

impl AddAssign for Mass {
    fn add_assign(&mut self, o: Mass) {
        self.0 += o.0;
    }
}

impl SubAssign for Mass {
    fn sub_assign(&mut self, o: Mass) {
        self.0 -= o.0;
    }
}

impl Sum for Mass {
    fn sum<I: Iterator<Item = Mass>>(iter: I) -> Mass {
        Mass(iter.map(|m| m.0).sum())
    }
}

//! Bandwidth and simulated-time units.
//!
//! Bandwidth is kept in integer bits per second throughout so that
//! threshold re-sizing conserves totals exactly. Simulated time is an
//! integer nanosecond count, which gives the event queue a total order
//! without floating point ties.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Bits per second.
pub type Bps = u64;

pub const KBPS: Bps = 1_000;
pub const MBPS: Bps = 1_000_000;

/// A point on the simulated clock, in nanoseconds.
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs_f64(secs: f64) -> SimTime {
        debug_assert!(secs >= 0.0 && secs.is_finite());
        SimTime((secs * 1e9).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secs_round_trip() {
        for s in [0.0, 0.001, 0.0125, 20.0, 119.999999] {
            assert_eq!(SimTime::from_secs_f64(s).as_secs_f64(), s);
        }
    }

    #[test]
    fn sub_saturates() {
        assert_eq!(SimTime(3) - SimTime(5), SimTime::ZERO);
    }
}

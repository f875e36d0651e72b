//! Simulated time.
//!
//! The whole simulator runs on one logical clock. Ticks are microseconds so
//! that per-operation NAND costs (tens of microseconds) keep every write
//! timestamp strictly ordered.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MICROS_PER_SEC: u64 = 1_000_000;
pub const SECS_PER_MIN: u64 = 60;
pub const SECS_PER_HOUR: u64 = 3_600;
pub const SECS_PER_DAY: u64 = 86_400;

/// An instant on the simulated clock, in microseconds since the simulated
/// epoch. The epoch falls on a midnight, so backup-cycle grids anchored at
/// `t = 0` line up with calendar days.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    /// Stand-in for "never dies": the chain head's `dead_at`.
    pub const INFINITY: SimTime = SimTime(u64::MAX);

    pub fn from_secs(secs: u64) -> Self {
        SimTime(secs * MICROS_PER_SEC)
    }

    /// `d` days plus `h:m:s` into that day.
    pub fn from_dhms(d: u64, h: u64, m: u64, s: u64) -> Self {
        SimTime::from_secs(d * SECS_PER_DAY + h * SECS_PER_HOUR + m * SECS_PER_MIN + s)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> u64 {
        self.0 / MICROS_PER_SEC
    }

    /// Index of the simulated calendar day containing this instant.
    pub fn day(self) -> u64 {
        self.0 / (SECS_PER_DAY * MICROS_PER_SEC)
    }

    pub fn saturating_add(self, d: SimDuration) -> SimTime {
        SimTime(self.0.saturating_add(d.0))
    }

    pub fn checked_sub(self, d: SimDuration) -> Option<SimTime> {
        self.0.checked_sub(d.0).map(SimTime)
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == SimTime::INFINITY {
            return write!(f, "t=inf");
        }
        write!(f, "t={}", format_sim_time(*self))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == SimTime::INFINITY {
            return write!(f, "inf");
        }
        write!(f, "{}", format_sim_time(*self))
    }
}

/// A span of simulated time, in microseconds.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimDuration(pub u64);

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub fn from_micros(us: u64) -> Self {
        SimDuration(us)
    }

    pub fn from_secs(secs: u64) -> Self {
        SimDuration(secs * MICROS_PER_SEC)
    }

    pub fn from_hours(h: u64) -> Self {
        SimDuration::from_secs(h * SECS_PER_HOUR)
    }

    pub fn from_days(d: u64) -> Self {
        SimDuration::from_secs(d * SECS_PER_DAY)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> u64 {
        self.0 / MICROS_PER_SEC
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Debug for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Renders `day N hh:mm:ss.uuuuuu`, dropping trailing zero parts.
pub fn format_sim_time(t: SimTime) -> String {
    let micros = t.0 % MICROS_PER_SEC;
    let total_secs = t.0 / MICROS_PER_SEC;
    let day = total_secs / SECS_PER_DAY;
    let rem = total_secs % SECS_PER_DAY;
    let (h, m, s) = (rem / SECS_PER_HOUR, rem % SECS_PER_HOUR / 60, rem % 60);
    if micros == 0 {
        format!("{day}d{h:02}:{m:02}:{s:02}")
    } else {
        format!("{day}d{h:02}:{m:02}:{s:02}.{micros:06}")
    }
}

/// Parses durations written as `<number><unit>`, e.g. `1year`, `24h`, `90min`.
///
/// Calendar units are fixed-width: a month is 30 days and a year is 365 days.
pub fn parse_duration(text: &str) -> Option<SimDuration> {
    let text = text.trim();
    let split = text.find(|c: char| !c.is_ascii_digit())?;
    if split == 0 {
        return None;
    }
    let (num, unit) = text.split_at(split);
    let n: u64 = num.parse().ok()?;
    let secs = match unit.trim().to_ascii_lowercase().as_str() {
        "s" | "sec" | "secs" | "second" | "seconds" => 1,
        "m" | "min" | "mins" | "minute" | "minutes" => SECS_PER_MIN,
        "h" | "hr" | "hour" | "hours" => SECS_PER_HOUR,
        "d" | "day" | "days" => SECS_PER_DAY,
        "w" | "week" | "weeks" => 7 * SECS_PER_DAY,
        "month" | "months" => 30 * SECS_PER_DAY,
        "y" | "year" | "years" => 365 * SECS_PER_DAY,
        _ => return None,
    };
    Some(SimDuration::from_secs(n.checked_mul(secs)?))
}

/// Parses an instant: either `<days>d[hh:mm[:ss]]` or a plain number of
/// seconds since the simulated epoch.
pub fn parse_sim_time(text: &str) -> Option<SimTime> {
    let text = text.trim();
    if let Some((days, clock)) = text.split_once('d') {
        let d: u64 = days.parse().ok()?;
        if clock.is_empty() {
            return Some(SimTime::from_dhms(d, 0, 0, 0));
        }
        let mut parts = clock.split(':');
        let h: u64 = parts.next()?.parse().ok()?;
        let m: u64 = parts.next()?.parse().ok()?;
        let s: u64 = match parts.next() {
            Some(p) => p.parse().ok()?,
            None => 0,
        };
        if parts.next().is_some() || h > 23 || m > 59 || s > 59 {
            return None;
        }
        return Some(SimTime::from_dhms(d, h, m, s));
    }
    text.parse::<u64>().ok().map(SimTime::from_secs)
}

//! UTC instants as microseconds since the POSIX epoch (leap seconds ignored).

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

pub const MICROS_PER_SECOND: i64 = 1_000_000;

/// A UTC instant with microsecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtcMicros(pub i64);

impl UtcMicros {
    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn from_seconds_f64(secs: f64) -> Self {
        UtcMicros((secs * MICROS_PER_SECOND as f64).round() as i64)
    }

    pub fn as_seconds_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SECOND as f64
    }

    pub fn plus_seconds(self, secs: f64) -> Self {
        UtcMicros(self.0 + (secs * MICROS_PER_SECOND as f64).round() as i64)
    }

    /// Signed difference `self - other` in seconds.
    pub fn seconds_since(self, other: UtcMicros) -> f64 {
        (self.0 - other.0) as f64 / MICROS_PER_SECOND as f64
    }

    pub fn midpoint(a: UtcMicros, b: UtcMicros) -> UtcMicros {
        UtcMicros(a.0 + (b.0 - a.0) / 2)
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_micros(self.0).single().expect("i64 microseconds always map to a UTC instant")
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        UtcMicros(dt.timestamp_micros())
    }

    /// Builds an instant from calendar year, ordinal day (1-based) and time of day.
    pub fn from_ordinal(year: i32, day_of_year: u32, hour: u32, minute: u32, second: u32, micros: u32) -> Option<Self> {
        let date = NaiveDate::from_yo_opt(year, day_of_year)?;
        let dt = date.and_hms_micro_opt(hour, minute, second, micros)?;
        Some(UtcMicros(dt.and_utc().timestamp_micros()))
    }

    /// Calendar fields `(year, day_of_year, hour, minute, second, microsecond)`.
    pub fn ordinal_fields(self) -> (i32, u32, u32, u32, u32, u32) {
        let dt = self.to_datetime();
        (dt.year(), dt.ordinal(), dt.hour(), dt.minute(), dt.second(), dt.timestamp_subsec_micros())
    }

    /// Start of the calendar year containing `year`, 00:00:00 January 1.
    pub fn year_start(year: i32) -> Option<Self> {
        Self::from_ordinal(year, 1, 0, 0, 0, 0)
    }

    pub fn to_rfc3339(self) -> String {
        self.to_datetime().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
    }
}

impl fmt::Display for UtcMicros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid UTC timestamp {0:?}: expected RFC 3339, e.g. 2019-02-05T10:00:00Z")]
pub struct ParseTimeError(String);

impl FromStr for UtcMicros {
    type Err = ParseTimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(UtcMicros::from_datetime(dt.with_timezone(&Utc)));
        }
        // naive timestamps are taken as UTC
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
            .map(|dt| UtcMicros(dt.and_utc().timestamp_micros()))
            .map_err(|_| ParseTimeError(s.to_string()))
    }
}

/// Serde helper for RFC 3339 strings at config/catalog boundaries.
pub mod rfc3339 {
    use super::UtcMicros;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &UtcMicros, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UtcMicros, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

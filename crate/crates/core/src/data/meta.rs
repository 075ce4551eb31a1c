use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: usize = 24 * 60;
pub const DAYS_PER_WEEK: usize = 7;

/// Sidecar metadata stored next to a data tensor file as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesMeta {
    pub sample_rate_minutes: u32,
    /// ISO-8601 instant of the first step, or `null` when unknown.
    pub start_timestamp: Option<String>,
    pub num_nodes: usize,
    pub channel_names: Vec<String>,
}

impl SeriesMeta {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let meta: SeriesMeta =
            serde_json::from_str(s).map_err(|e| Error::Metadata(e.to_string()))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_minutes == 0 {
            return Err(Error::Metadata("sample_rate_minutes must be positive".into()));
        }
        if MINUTES_PER_DAY % self.sample_rate_minutes as usize != 0 {
            return Err(Error::Metadata(format!(
                "sample rate {} min does not divide a day",
                self.sample_rate_minutes
            )));
        }
        if self.num_nodes == 0 {
            return Err(Error::Metadata("num_nodes must be positive".into()));
        }
        self.calendar().map(|_| ())
    }

    /// Calendar derived from the sample rate and start instant.
    pub fn calendar(&self) -> Result<Calendar> {
        let start = match &self.start_timestamp {
            Some(s) => Some(parse_timestamp(s)?),
            None => None,
        };
        Ok(Calendar::new(self.sample_rate_minutes as usize, start))
    }
}

/// Accepts RFC 3339, a naive `YYYY-MM-DDTHH:MM[:SS]` (or space separated)
/// timestamp, or a bare date.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.naive_local());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap());
    }
    Err(Error::Metadata(format!("unparseable timestamp {s:?}")))
}

/// Maps step indices to time-of-day and day-of-week slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Calendar {
    pub sample_rate_minutes: usize,
    /// Minutes since Monday 00:00 of step 0; 0 when the start is unknown.
    pub start_minute_of_week: usize,
}

impl Calendar {
    pub fn new(sample_rate_minutes: usize, start: Option<NaiveDateTime>) -> Self {
        let start_minute_of_week = start.map_or(0, |t| {
            t.weekday().num_days_from_monday() as usize * MINUTES_PER_DAY
                + t.hour() as usize * 60
                + t.minute() as usize
        });
        Calendar {
            sample_rate_minutes,
            start_minute_of_week,
        }
    }

    /// Number of sampling intervals in a day.
    pub fn steps_per_day(&self) -> usize {
        MINUTES_PER_DAY / self.sample_rate_minutes
    }

    pub fn time_of_day(&self, step: usize) -> usize {
        let offset = (self.start_minute_of_week % MINUTES_PER_DAY) / self.sample_rate_minutes;
        (offset + step) % self.steps_per_day()
    }

    pub fn day_of_week(&self, step: usize) -> usize {
        let minute = self.start_minute_of_week + step * self.sample_rate_minutes;
        (minute / MINUTES_PER_DAY) % DAYS_PER_WEEK
    }
}

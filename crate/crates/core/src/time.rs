//! Seconds-granularity UTC datestamps.

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};

pub const DATESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// Granularity string advertised by Identify.
pub const GRANULARITY: &str = "YYYY-MM-DDThh:mm:ssZ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Day,
    Seconds,
}

/// Which end of a harvesting window a day-granularity value stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    From,
    Until,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid datestamp {0:?}")]
pub struct DatestampError(pub String);

pub fn truncate_to_seconds(instant: DateTime<Utc>) -> DateTime<Utc> {
    Utc.timestamp_opt(instant.timestamp(), 0)
        .single()
        .expect("whole-second timestamps are always representable")
}

pub fn format_datestamp(instant: DateTime<Utc>) -> String {
    instant.format(DATESTAMP_FORMAT).to_string()
}

/// Parses the strict `YYYY-MM-DDThh:mm:ssZ` form.
pub fn parse_datestamp(value: &str) -> Result<DateTime<Utc>, DatestampError> {
    if value.len() != 20 {
        return Err(DatestampError(value.to_owned()));
    }
    NaiveDateTime::parse_from_str(value, DATESTAMP_FORMAT)
        .map(|naive| naive.and_utc())
        .map_err(|_| DatestampError(value.to_owned()))
}

/// Parses an OAI-PMH `from`/`until` argument in either granularity.
///
/// Day values expand to the first second of the day for `from` and the last
/// second of the day for `until`.
pub fn parse_window_bound(
    value: &str,
    bound: Bound,
) -> Result<(DateTime<Utc>, Granularity), DatestampError> {
    if value.len() == 10 {
        let date = NaiveDate::parse_from_str(value, "%Y-%m-%d")
            .map_err(|_| DatestampError(value.to_owned()))?;
        let time = match bound {
            Bound::From => date.and_hms_opt(0, 0, 0),
            Bound::Until => date.and_hms_opt(23, 59, 59),
        }
        .ok_or_else(|| DatestampError(value.to_owned()))?;
        return Ok((time.and_utc(), Granularity::Day));
    }
    parse_datestamp(value).map(|instant| (instant, Granularity::Seconds))
}

pub fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatetimePart {
    Year,
    Month,
    Day,
    Hour,
    Minute,
    Second,
}

const ALL_PARTS: [DatetimePart; 6] = [
    DatetimePart::Year,
    DatetimePart::Month,
    DatetimePart::Day,
    DatetimePart::Hour,
    DatetimePart::Minute,
    DatetimePart::Second,
];

fn part_value(dt: &NaiveDateTime, p: DatetimePart) -> i64 {
    match p {
        DatetimePart::Year => dt.year() as i64,
        DatetimePart::Month => dt.month() as i64,
        DatetimePart::Day => dt.day() as i64,
        DatetimePart::Hour => dt.hour() as i64,
        DatetimePart::Minute => dt.minute() as i64,
        DatetimePart::Second => dt.second() as i64,
    }
}

pub(crate) fn days_in_month(year: i64, month: i64) -> i64 {
    match month {
        4 | 6 | 9 | 11 => 30,
        2 if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        2 => 28,
        _ => 31,
    }
}

/// Calendar parts that vary in the data, each as its own sub-column.
/// The leading sub-column carries one extra category for missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatetimeEncoder {
    parts: Vec<DatetimePart>,
    year_min: i64,
    year_max: i64,
    /// Values of every part in the first observation, used for dropped parts.
    base: [i64; 6],
    has_time: bool,
}

impl DatetimeEncoder {
    pub fn fit(values: &[(NaiveDateTime, bool)]) -> Result<Self> {
        let Some((first, _)) = values.first() else {
            return Err(Error::Encoding("datetime encoding needs at least one parseable value".into()));
        };
        let base = ALL_PARTS.map(|p| part_value(first, p));
        let mut parts: Vec<DatetimePart> = ALL_PARTS
            .iter()
            .enumerate()
            .filter(|(k, &p)| values.iter().any(|(dt, _)| part_value(dt, p) != base[*k]))
            .map(|(_, &p)| p)
            .collect();
        if parts.is_empty() {
            parts.push(DatetimePart::Year);
        }
        let years = values.iter().map(|(dt, _)| dt.year() as i64);
        let year_min = years.clone().min().unwrap();
        let year_max = years.max().unwrap();
        let has_time = values.iter().any(|(_, t)| *t);
        Ok(Self { parts, year_min, year_max, base, has_time })
    }

    pub fn parts(&self) -> &[DatetimePart] {
        &self.parts
    }

    fn domain(&self, p: DatetimePart) -> (i64, u32) {
        match p {
            DatetimePart::Year => (self.year_min, (self.year_max - self.year_min + 1) as u32),
            DatetimePart::Month => (1, 12),
            DatetimePart::Day => (1, 31),
            DatetimePart::Hour => (0, 24),
            DatetimePart::Minute | DatetimePart::Second => (0, 60),
        }
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.parts
            .iter()
            .enumerate()
            .map(|(k, &p)| self.domain(p).1 + (k == 0) as u32)
            .collect()
    }

    pub fn sub_column_names(&self, parent: &str) -> Vec<String> {
        self.parts
            .iter()
            .map(|p| {
                let s = serde_json::to_value(p).ok();
                let s = s.as_ref().and_then(|v| v.as_str()).unwrap_or("part");
                format!("{parent}::{s}")
            })
            .collect()
    }

    pub fn encode(&self, value: Option<NaiveDateTime>, out: &mut [u32]) -> Result<()> {
        let Some(dt) = value else {
            out.fill(0);
            out[0] = self.domain(self.parts[0]).1;
            return Ok(());
        };
        for (slot, &p) in out.iter_mut().zip(&self.parts) {
            let (lo, card) = self.domain(p);
            let idx = part_value(&dt, p) - lo;
            if idx < 0 || idx >= card as i64 {
                return Err(Error::Encoding(format!("{dt} is outside the fitted {p:?} range")));
            }
            *slot = idx as u32;
        }
        Ok(())
    }

    pub fn decode(&self, codes: &[u32]) -> Result<Option<String>> {
        let (_, lead_card) = self.domain(self.parts[0]);
        if codes[0] == lead_card {
            return Ok(None);
        }
        let mut v = self.base;
        for (&c, &p) in codes.iter().zip(&self.parts) {
            let (lo, card) = self.domain(p);
            if c >= card {
                return Err(Error::Encoding(format!("{p:?} index {c} out of range")));
            }
            let k = ALL_PARTS.iter().position(|&q| q == p).unwrap();
            v[k] = lo + c as i64;
        }
        let [year, month, day, hour, minute, second] = v;
        let day = day.min(days_in_month(year, month));
        let date = NaiveDate::from_ymd_opt(year as i32, month as u32, day as u32)
            .ok_or_else(|| Error::Encoding(format!("invalid date {year}-{month}-{day}")))?;
        Ok(Some(if self.has_time {
            let dt = date
                .and_hms_opt(hour as u32, minute as u32, second as u32)
                .ok_or_else(|| Error::Encoding("invalid time of day".into()))?;
            dt.format("%Y-%m-%dT%H:%M:%S").to_string()
        } else {
            date.format("%Y-%m-%d").to_string()
        }))
    }
}

//! Standardized week calendar.
//!
//! Weeks are fixed seven-day blocks counted from January 1. Week 52 ends on
//! day 364; week 53 holds the one (common year) or two (leap year) days left
//! over, so every year has the same 52 full weeks regardless of weekday.

use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub const FULL_WEEKS: usize = 52;
pub const PARTIAL_WEEK: u8 = 53;

/// Week number in `1..=53`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct WeekIndex(u8);

impl WeekIndex {
    pub fn new(week: u8) -> Option<Self> {
        (1..=PARTIAL_WEEK).contains(&week).then_some(WeekIndex(week))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_partial(self) -> bool {
        self.0 == PARTIAL_WEEK
    }
}

impl TryFrom<u8> for WeekIndex {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        WeekIndex::new(value).ok_or_else(|| format!("week {value} outside 1..=53"))
    }
}

impl From<WeekIndex> for u8 {
    fn from(w: WeekIndex) -> u8 {
        w.0
    }
}

impl fmt::Display for WeekIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn is_leap(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

/// Days in the partial week 53: 1 in common years, 2 in leap years.
pub fn partial_week_days(year: i32) -> u32 {
    if is_leap(year) {
        2
    } else {
        1
    }
}

pub fn days_in_year(year: i32) -> u32 {
    364 + partial_week_days(year)
}

/// Week for a 1-based day of the year. Days past 366 are clamped into week 53.
pub fn week_of_day(day_of_year: u32) -> WeekIndex {
    assert!(day_of_year >= 1, "day of year is 1-based");
    if day_of_year > 364 {
        WeekIndex(PARTIAL_WEEK)
    } else {
        WeekIndex(day_of_year.div_ceil(7) as u8)
    }
}

pub fn week_of(date: NaiveDate) -> WeekIndex {
    week_of_day(date.ordinal())
}

/// First and last day of year (inclusive, 1-based) covered by `week`.
pub fn week_days(year: i32, week: WeekIndex) -> (u32, u32) {
    if week.is_partial() {
        (365, days_in_year(year))
    } else {
        let w = u32::from(week.get());
        (7 * (w - 1) + 1, 7 * w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries() {
        assert_eq!(week_of_day(1).get(), 1);
        assert_eq!(week_of_day(7).get(), 1);
        assert_eq!(week_of_day(8).get(), 2);
        assert_eq!(week_of_day(14).get(), 2);
        assert_eq!(week_of_day(358).get(), 52);
        assert_eq!(week_of_day(364).get(), 52);
        assert_eq!(week_of_day(365).get(), 53);
        assert_eq!(week_of_day(366).get(), 53);
    }

    #[test]
    fn dates() {
        let d = NaiveDate::from_ymd_opt(2020, 12, 31).unwrap();
        assert_eq!(d.ordinal(), 366);
        assert_eq!(week_of(d).get(), 53);
        let d = NaiveDate::from_ymd_opt(2022, 3, 15).unwrap();
        assert_eq!(week_of(d).get(), 11);
        let d = NaiveDate::from_ymd_opt(2021, 12, 30).unwrap();
        assert_eq!(week_of(d).get(), 52);
    }

    #[test]
    fn leap_rules() {
        assert!(is_leap(2000));
        assert!(!is_leap(1900));
        assert!(is_leap(2020));
        assert!(!is_leap(2021));
        assert_eq!(partial_week_days(2020), 2);
        assert_eq!(partial_week_days(2019), 1);
    }

    #[test]
    fn week_days_tile_the_year() {
        for year in [2019, 2020] {
            let mut next = 1;
            for w in 1..=53u8 {
                let (a, b) = week_days(year, WeekIndex::new(w).unwrap());
                assert_eq!(a, next);
                for d in a..=b {
                    assert_eq!(week_of_day(d).get(), w);
                }
                next = b + 1;
            }
            assert_eq!(next - 1, days_in_year(year));
        }
    }

    #[test]
    fn rejects_out_of_range_week() {
        assert!(WeekIndex::new(0).is_none());
        assert!(WeekIndex::new(54).is_none());
    }
}

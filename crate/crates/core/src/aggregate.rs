//! Stratified annual weekly series.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{is_leap, FULL_WEEKS};
use crate::error::{Error, Result};
use crate::ingest::{CanonicalRecord, CauseClass, Sex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SexGroup {
    Male,
    Female,
    Both,
}

impl SexGroup {
    pub const ALL: [SexGroup; 3] = [SexGroup::Both, SexGroup::Male, SexGroup::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            SexGroup::Male => "male",
            SexGroup::Female => "female",
            SexGroup::Both => "both",
        }
    }

    pub fn contains(self, sex: Sex) -> bool {
        match self {
            SexGroup::Both => true,
            SexGroup::Male => sex == Sex::Male,
            SexGroup::Female => sex == Sex::Female,
        }
    }
}

impl fmt::Display for SexGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SexGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(SexGroup::Male),
            "female" | "f" => Ok(SexGroup::Female),
            "both" | "all" => Ok(SexGroup::Both),
            other => Err(Error::Config(format!("unknown sex group {other:?}"))),
        }
    }
}

/// Age brackets plus the all-ages aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgeGroup {
    Age0To5,
    Age6To10,
    Age11To19,
    Age20To29,
    Age30To39,
    Age40To49,
    Age50To59,
    Age60To69,
    Age70Plus,
    All,
}

impl AgeGroup {
    pub const BRACKETS: [AgeGroup; 9] = [
        AgeGroup::Age0To5,
        AgeGroup::Age6To10,
        AgeGroup::Age11To19,
        AgeGroup::Age20To29,
        AgeGroup::Age30To39,
        AgeGroup::Age40To49,
        AgeGroup::Age50To59,
        AgeGroup::Age60To69,
        AgeGroup::Age70Plus,
    ];

    /// The nine brackets followed by the all-ages row.
    pub const GRID: [AgeGroup; 10] = [
        AgeGroup::Age0To5,
        AgeGroup::Age6To10,
        AgeGroup::Age11To19,
        AgeGroup::Age20To29,
        AgeGroup::Age30To39,
        AgeGroup::Age40To49,
        AgeGroup::Age50To59,
        AgeGroup::Age60To69,
        AgeGroup::Age70Plus,
        AgeGroup::All,
    ];

    pub fn bracket_of(age: u32) -> AgeGroup {
        match age {
            0..=5 => AgeGroup::Age0To5,
            6..=10 => AgeGroup::Age6To10,
            11..=19 => AgeGroup::Age11To19,
            20..=29 => AgeGroup::Age20To29,
            30..=39 => AgeGroup::Age30To39,
            40..=49 => AgeGroup::Age40To49,
            50..=59 => AgeGroup::Age50To59,
            60..=69 => AgeGroup::Age60To69,
            _ => AgeGroup::Age70Plus,
        }
    }

    /// Inclusive age bounds; `None` upper bound means open-ended.
    pub fn bounds(self) -> Option<(u32, Option<u32>)> {
        Some(match self {
            AgeGroup::Age0To5 => (0, Some(5)),
            AgeGroup::Age6To10 => (6, Some(10)),
            AgeGroup::Age11To19 => (11, Some(19)),
            AgeGroup::Age20To29 => (20, Some(29)),
            AgeGroup::Age30To39 => (30, Some(39)),
            AgeGroup::Age40To49 => (40, Some(49)),
            AgeGroup::Age50To59 => (50, Some(59)),
            AgeGroup::Age60To69 => (60, Some(69)),
            AgeGroup::Age70Plus => (70, None),
            AgeGroup::All => return None,
        })
    }

    pub fn contains(self, age: Option<u32>) -> bool {
        match (self, age) {
            (AgeGroup::All, _) => true,
            (_, None) => false,
            (g, Some(a)) => AgeGroup::bracket_of(a) == g,
        }
    }

    fn slot(age: Option<u32>) -> usize {
        match age {
            None => 9,
            Some(a) => AgeGroup::bracket_of(a) as usize,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::Age0To5 => "0-5",
            AgeGroup::Age6To10 => "6-10",
            AgeGroup::Age11To19 => "11-19",
            AgeGroup::Age20To29 => "20-29",
            AgeGroup::Age30To39 => "30-39",
            AgeGroup::Age40To49 => "40-49",
            AgeGroup::Age50To59 => "50-59",
            AgeGroup::Age60To69 => "60-69",
            AgeGroup::Age70Plus => "70+",
            AgeGroup::All => "all",
        }
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgeGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        AgeGroup::GRID
            .into_iter()
            .find(|g| g.label() == s || (*g == AgeGroup::Age70Plus && s == "70"))
            .ok_or_else(|| Error::Config(format!("unknown age group {s:?}")))
    }
}

impl Serialize for AgeGroup {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for AgeGroup {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StratumKey {
    pub sex: SexGroup,
    pub age_group: AgeGroup,
}

impl StratumKey {
    pub const TOTAL: StratumKey = StratumKey {
        sex: SexGroup::Both,
        age_group: AgeGroup::All,
    };

    pub fn new(sex: SexGroup, age_group: AgeGroup) -> Self {
        StratumKey { sex, age_group }
    }

    /// All 30 strata: three sex cases by ten age groups.
    pub fn full_grid() -> Vec<StratumKey> {
        SexGroup::ALL
            .iter()
            .flat_map(|&s| AgeGroup::GRID.iter().map(move |&a| StratumKey::new(s, a)))
            .collect()
    }

    pub fn contains(&self, sex: Sex, age: Option<u32>) -> bool {
        self.sex.contains(sex) && self.age_group.contains(age)
    }

    /// Parses `"all"` (the full grid) or a comma list of `sex/age` keys.
    pub fn parse_list(s: &str) -> Result<Vec<StratumKey>> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") || s.is_empty() {
            return Ok(StratumKey::full_grid());
        }
        let mut out: Vec<StratumKey> = Vec::new();
        for item in s.split(',') {
            let key: StratumKey = item.parse()?;
            if !out.contains(&key) {
                out.push(key);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.sex, self.age_group)
    }
}

impl FromStr for StratumKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (sex, age) = s
            .trim()
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("stratum {s:?} is not of the form sex/age")))?;
        Ok(StratumKey::new(sex.parse()?, age.parse()?))
    }
}

/// Weekly illness deaths of one stratum-year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnualWeeklySeries {
    pub year: i32,
    pub stratum: StratumKey,
    /// Weeks 1..=52.
    pub counts: Vec<u64>,
    /// Partial week 53 (one day, or two in leap years).
    pub week53_count: u64,
    pub leap: bool,
}

impl AnnualWeeklySeries {
    pub fn zeros(year: i32, stratum: StratumKey) -> Self {
        AnnualWeeklySeries {
            year,
            stratum,
            counts: vec![0; FULL_WEEKS],
            week53_count: 0,
            leap: is_leap(year),
        }
    }

    pub fn from_counts(year: i32, stratum: StratumKey, counts: Vec<u64>, week53_count: u64) -> Result<Self> {
        if counts.len() != FULL_WEEKS {
            return Err(Error::Parameter(format!(
                "a weekly series needs {FULL_WEEKS} full-week counts, got {}",
                counts.len()
            )));
        }
        Ok(AnnualWeeklySeries {
            year,
            stratum,
            counts,
            week53_count,
            leap: is_leap(year),
        })
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn total(&self) -> u64 {
        series_total(self)
    }
}

pub fn series_total(series: &AnnualWeeklySeries) -> u64 {
    series.counts.iter().sum::<u64>() + series.week53_count
}

const SEX_SLOTS: usize = 3;
const AGE_SLOTS: usize = 10;

fn sex_slot(sex: Sex) -> usize {
    match sex {
        Sex::Male => 0,
        Sex::Female => 1,
        Sex::Unknown => 2,
    }
}

/// Illness counts binned by (year, sex, age bracket or unknown, week).
/// Partial tallies from disjoint record chunks merge by addition.
#[derive(Debug, Clone, Default)]
pub struct WeeklyTally {
    bins: HashMap<i32, Vec<u64>>,
}

impl WeeklyTally {
    fn index(sex: usize, age: usize, week: usize) -> usize {
        (sex * AGE_SLOTS + age) * 53 + (week - 1)
    }

    pub fn add(&mut self, rec: &CanonicalRecord) {
        if rec.cause_class != CauseClass::Illness {
            return;
        }
        let bins = self
            .bins
            .entry(rec.occurrence_year)
            .or_insert_with(|| vec![0; SEX_SLOTS * AGE_SLOTS * 53]);
        let i = Self::index(sex_slot(rec.sex), AgeGroup::slot(rec.age_years), rec.week.get() as usize);
        bins[i] += 1;
    }

    pub fn merge(mut self, other: WeeklyTally) -> WeeklyTally {
        for (year, theirs) in other.bins {
            match self.bins.get_mut(&year) {
                Some(ours) => ours.iter_mut().zip(theirs).for_each(|(a, b)| *a += b),
                None => {
                    self.bins.insert(year, theirs);
                }
            }
        }
        self
    }

    pub fn series(&self, year: i32, stratum: StratumKey) -> AnnualWeeklySeries {
        let mut s = AnnualWeeklySeries::zeros(year, stratum);
        let Some(bins) = self.bins.get(&year) else {
            return s;
        };
        let sexes = [Sex::Male, Sex::Female, Sex::Unknown];
        for sex in sexes.iter().filter(|&&x| stratum.sex.contains(x)) {
            for age in 0..AGE_SLOTS {
                let included = match stratum.age_group {
                    AgeGroup::All => true,
                    g => age == g as usize,
                };
                if !included {
                    continue;
                }
                for week in 1..=53 {
                    let c = bins[Self::index(sex_slot(*sex), age, week)];
                    if week == 53 {
                        s.week53_count += c;
                    } else {
                        s.counts[week - 1] += c;
                    }
                }
            }
        }
        s
    }
}

pub type SeriesMap = BTreeMap<(i32, StratumKey), AnnualWeeklySeries>;

/// Builds a series for every requested (year, stratum) cell, zero-filled
/// where no deaths occurred. Non-illness records are ignored.
pub fn build_series(
    records: &[CanonicalRecord],
    years: RangeInclusive<i32>,
    strata: &[StratumKey],
) -> Result<SeriesMap> {
    if years.is_empty() {
        return Err(Error::Config(format!(
            "empty year range {}:{}",
            years.start(),
            years.end()
        )));
    }
    let tally = records
        .par_chunks(64 * 1024)
        .map(|chunk| {
            let mut t = WeeklyTally::default();
            chunk.iter().for_each(|r| t.add(r));
            t
        })
        .reduce(WeeklyTally::default, WeeklyTally::merge);

    let mut out = SeriesMap::new();
    for year in years {
        for &stratum in strata {
            out.insert((year, stratum), tally.series(year, stratum));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongRow {
    pub year: i32,
    pub sex: SexGroup,
    pub age_group: AgeGroup,
    pub week: u8,
    pub count: u64,
}

/// Long-format table: one row per (year, stratum, week), weeks 1..=53.
pub fn write_long<W: std::io::Write>(series: &SeriesMap, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in series.values() {
        for (i, &count) in s.counts.iter().chain(std::iter::once(&s.week53_count)).enumerate() {
            w.serialize(LongRow {
                year: s.year,
                sex: s.stratum.sex,
                age_group: s.stratum.age_group,
                week: i as u8 + 1,
                count,
            })?;
        }
    }
    w.flush().map_err(Error::Write)?;
    Ok(())
}

pub fn read_long<R: std::io::Read>(input: R) -> Result<SeriesMap> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = SeriesMap::new();
    for row in rdr.deserialize::<LongRow>() {
        let row = row?;
        let stratum = StratumKey::new(row.sex, row.age_group);
        let s = out
            .entry((row.year, stratum))
            .or_insert_with(|| AnnualWeeklySeries::zeros(row.year, stratum));
        match row.week {
            1..=52 => s.counts[row.week as usize - 1] = row.count,
            53 => s.week53_count = row.count,
            w => return Err(Error::Config(format!("week {w} outside 1..=53"))),
        }
    }
    Ok(out)
}

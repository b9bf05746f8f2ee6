//! Synthetic death registries with known ground truth.
//!
//! Each year's weekly illness counts are drawn from the quartic seasonal
//! model with linearly drifting coefficients and σ, rounded to integers,
//! plus any injected shock mass. Deaths are then spread uniformly over the
//! days of their week and given a sex, an age and a cause code, and written
//! in the same delimited layout the ingest stage reads with its default
//! schema.
//!
//! Every year draws from its own ChaCha stream derived from the seed, so
//! years can be generated in parallel without changing the output. Counts
//! and record details use separate streams, which lets [`simulate_counts`]
//! reproduce the weekly counts of [`generate_registry`] without expanding
//! records.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{AgeGroup, AnnualWeeklySeries, SexGroup, StratumKey};
use crate::calendar::{days_in_year, is_leap, partial_week_days, week_days, WeekIndex, FULL_WEEKS};
use crate::error::{Error, Result};
use crate::excess::{Period, PopulationTable};
use crate::ingest::Sex;
use crate::polyfit::{evaluate, Coefficients, N_COEF};

/// `value(year) = intercept + slope·(year − anchor_year)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrend {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearTrend {
    pub fn flat(value: f64) -> Self {
        LinearTrend {
            slope: 0.0,
            intercept: value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    pub year: i32,
    /// Extra deaths, rounded to a whole number.
    pub mass: f64,
    /// Inclusive week range receiving the mass in equal shares.
    pub first_week: u8,
    pub last_week: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub reference_years: (i32, i32),
    pub forecast_years: (i32, i32),
    pub anchor_year: i32,
    /// Trends for α, β₁, β₂, β₃, β₄ and σ, in that order.
    pub trends: Vec<LinearTrend>,
    pub shocks: Vec<Shock>,
    /// Probability that a death is registered the year after it occurred.
    pub registration_lag_pct: f64,
    /// Share of non-illness deaths among all deaths.
    pub non_illness_share: f64,
    /// Weights of male, female and unknown sex.
    pub sex_mix: Vec<f64>,
    /// Weights of the nine age brackets followed by unknown age.
    pub age_mix: Vec<f64>,
    pub seed: u64,
}

/// Raw-basis coefficients of `1000 + 1.2(w − 27)² − 0.0002(w − 27)⁴`, a
/// U-shaped year with its minimum of 1000 at week 27.
pub const DEFAULT_SHAPE: Coefficients = [1768.5118, -49.0536, 0.3252, 0.0216, -0.0002];

impl Default for SynthConfig {
    fn default() -> Self {
        let growth = 0.018;
        let mut trends: Vec<LinearTrend> = DEFAULT_SHAPE
            .iter()
            .map(|&c| LinearTrend {
                slope: c * growth,
                intercept: c,
            })
            .collect();
        trends.push(LinearTrend {
            slope: 0.5,
            intercept: 40.0,
        });
        SynthConfig {
            reference_years: (1998, 2019),
            forecast_years: (2020, 2022),
            anchor_year: 1998,
            trends,
            shocks: Vec::new(),
            registration_lag_pct: 0.026,
            non_illness_share: 0.11,
            sex_mix: vec![0.55, 0.44, 0.01],
            age_mix: vec![0.03, 0.005, 0.01, 0.03, 0.04, 0.07, 0.12, 0.18, 0.51, 0.005],
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn first_year(&self) -> i32 {
        self.reference_years.0.min(self.forecast_years.0)
    }

    pub fn last_year(&self) -> i32 {
        self.reference_years.1.max(self.forecast_years.1)
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first_year()..=self.last_year()
    }

    fn trend_at(&self, idx: usize, year: i32) -> f64 {
        let t = &self.trends[idx];
        t.intercept + t.slope * f64::from(year - self.anchor_year)
    }

    pub fn coefficients_at(&self, year: i32) -> Coefficients {
        let mut c = [0.0; N_COEF];
        for (j, v) in c.iter_mut().enumerate() {
            *v = self.trend_at(j, year);
        }
        c
    }

    pub fn sigma_at(&self, year: i32) -> f64 {
        self.trend_at(N_COEF, year)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reference_years.1 < self.reference_years.0 || self.forecast_years.1 < self.forecast_years.0 {
            return bad("empty year range".into());
        }
        if self.trends.len() != N_COEF + 1 {
            return bad(format!("need 6 parameter trends, got {}", self.trends.len()));
        }
        if !(0.0..1.0).contains(&self.registration_lag_pct) {
            return bad(format!("registration_lag_pct {} outside [0, 1)", self.registration_lag_pct));
        }
        if !(0.0..1.0).contains(&self.non_illness_share) {
            return bad(format!("non_illness_share {} outside [0, 1)", self.non_illness_share));
        }
        if self.sex_mix.len() != 3 || self.age_mix.len() != 10 {
            return bad("sex_mix needs 3 weights and age_mix 10".into());
        }
        for mix in [&self.sex_mix, &self.age_mix] {
            if mix.iter().any(|w| !(*w >= 0.0)) || mix.iter().sum::<f64>() <= 0.0 {
                return bad("mix weights must be non-negative with a positive sum".into());
            }
        }
        for (i, s) in self.shocks.iter().enumerate() {
            let year = s.year;
            if self.shocks[..i].iter().any(|o| o.year == year) {
                return bad(format!("more than one shock in {year}"));
            }
            if !(1..=53).contains(&s.first_week) || !(s.first_week..=53).contains(&s.last_week) {
                return bad(format!("shock weeks {}..{} in {year} invalid", s.first_week, s.last_week));
            }
            if !(s.mass >= 0.0) {
                return bad(format!("shock mass {} in {year} is negative", s.mass));
            }
        }
        for year in self.years() {
            let c = self.coefficients_at(year);
            if let Some(w) = (1..=53).find(|&w| evaluate(&c, f64::from(w)) < 0.0) {
                return bad(format!("weekly intensity is negative in week {w} of {year}"));
            }
            if self.sigma_at(year) < 0.0 {
                return bad(format!("sigma is negative in {year}"));
            }
        }
        Ok(())
    }

    fn rng(&self, year: i32, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (year as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(stream);
        rng
    }
}

/// Weekly illness counts of one synthetic year, index 0..=52 for weeks 1..=53.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearCounts {
    pub year: i32,
    pub baseline: Vec<u64>,
    pub shock: Vec<u64>,
}

impl YearCounts {
    pub fn week(&self, w: usize) -> u64 {
        self.baseline[w] + self.shock[w]
    }

    pub fn total(&self) -> u64 {
        self.baseline.iter().chain(&self.shock).sum()
    }

    pub fn shock_total(&self) -> u64 {
        self.shock.iter().sum()
    }

    /// All-strata weekly series.
    pub fn series(&self) -> AnnualWeeklySeries {
        let counts = (0..FULL_WEEKS).map(|w| self.week(w)).collect();
        AnnualWeeklySeries::from_counts(self.year, StratumKey::TOTAL, counts, self.week(FULL_WEEKS))
            .expect("52 weeks")
    }
}

fn allocate(mass: u64, first: u8, last: u8) -> Vec<u64> {
    let mut out = vec![0; 53];
    let k = u64::from(last - first + 1);
    for (i, w) in (first..=last).enumerate() {
        out[w as usize - 1] = mass / k + u64::from((i as u64) < mass % k);
    }
    out
}

fn year_counts(cfg: &SynthConfig, year: i32) -> YearCounts {
    let mut rng = cfg.rng(year, 0);
    let c = cfg.coefficients_at(year);
    let sigma = cfg.sigma_at(year);
    let share = f64::from(partial_week_days(year)) / 7.0;
    let mut baseline = Vec::with_capacity(53);
    for w in 1..=53u32 {
        let z: f64 = StandardNormal.sample(&mut rng);
        let level = evaluate(&c, f64::from(w)) + sigma * z;
        let v = if w == 53 { level * share } else { level };
        baseline.push(v.round().max(0.0) as u64);
    }
    let shock = match cfg.shocks.iter().find(|s| s.year == year) {
        Some(s) => allocate(s.mass.round() as u64, s.first_week, s.last_week),
        None => vec![0; 53],
    };
    YearCounts { year, baseline, shock }
}

/// Weekly counts for every generated year, without expanding records.
pub fn simulate_counts(cfg: &SynthConfig) -> Result<Vec<YearCounts>> {
    cfg.validate()?;
    Ok(cfg.years().collect::<Vec<_>>().par_iter().map(|&y| year_counts(cfg, y)).collect())
}

/// One generated registry row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthRecord {
    pub date: NaiveDate,
    pub registration_year: i32,
    pub sex: Sex,
    pub age: Option<u32>,
    pub cause: &'static str,
    pub shock: bool,
}

const ILLNESS_CODES: [&str; 8] = ["I219", "E119", "J189", "C349", "K746", "N189", "I64X", "J449"];
const NON_ILLNESS_CODES: [&str; 6] = ["V892", "W19X", "X599", "Y349", "X954", "W79X"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearTruth {
    pub year: i32,
    pub leap: bool,
    pub coefficients: Coefficients,
    pub sigma: f64,
    pub shock_mass: u64,
    pub illness_total: u64,
    pub non_illness_total: u64,
    pub late_registrations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTruth {
    pub year: i32,
    pub sex: SexGroup,
    pub age_group: AgeGroup,
    pub illness_total: u64,
    pub shock: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub years: Vec<YearTruth>,
    pub strata: Vec<StratumTruth>,
}

impl GroundTruth {
    pub fn year(&self, year: i32) -> Option<&YearTruth> {
        self.years.iter().find(|y| y.year == year)
    }

    pub fn total_records(&self) -> u64 {
        self.years.iter().map(|y| y.illness_total + y.non_illness_total).sum()
    }
}

/// Injected shock deaths summed over the period, all strata.
pub fn ground_truth_excess(truth: &GroundTruth, period: Period) -> f64 {
    truth
        .years
        .iter()
        .filter(|y| period.contains(y.year))
        .map(|y| y.shock_mass as f64)
        .sum()
}

/// Injected shock deaths of one stratum summed over the period.
pub fn ground_truth_excess_for(truth: &GroundTruth, period: Period, stratum: StratumKey) -> f64 {
    truth
        .strata
        .iter()
        .filter(|s| period.contains(s.year) && s.sex == stratum.sex && s.age_group == stratum.age_group)
        .map(|s| s.shock as f64)
        .sum()
}

struct Demography {
    sex: WeightedIndex<f64>,
    age: WeightedIndex<f64>,
}

impl Demography {
    fn new(cfg: &SynthConfig) -> Self {
        Demography {
            sex: WeightedIndex::new(&cfg.sex_mix).expect("validated"),
            age: WeightedIndex::new(&cfg.age_mix).expect("validated"),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (Sex, Option<u32>) {
        let sex = [Sex::Male, Sex::Female, Sex::Unknown][self.sex.sample(rng)];
        let slot = self.age.sample(rng);
        let age = AgeGroup::BRACKETS.get(slot).map(|g| {
            let (lo, hi) = g.bounds().expect("bracket");
            rng.random_range(lo..=hi.unwrap_or(99))
        });
        (sex, age)
    }
}

struct YearOutput {
    records: Vec<SynthRecord>,
    truth: YearTruth,
    strata: Vec<StratumTruth>,
}

fn year_registry(cfg: &SynthConfig, counts: &YearCounts) -> YearOutput {
    let year = counts.year;
    let mut rng = cfg.rng(year, 1);
    let demo = Demography::new(cfg);
    let grid = StratumKey::full_grid();
    let mut per_stratum: BTreeMap<StratumKey, (u64, u64)> = grid.iter().map(|k| (*k, (0, 0))).collect();
    let mut records = Vec::with_capacity(counts.total() as usize);
    let mut late = 0;
    let date_of = |day: u32| NaiveDate::from_yo_opt(year, day).expect("day within year");

    let mut emit = |rng: &mut ChaCha8Rng, day: u32, cause: &'static str, illness: bool, shock: bool| {
        let (sex, age) = demo.draw(rng);
        let lagged = rng.random_bool(cfg.registration_lag_pct);
        late += u64::from(lagged);
        if illness {
            for key in &grid {
                if key.contains(sex, age) {
                    let e = per_stratum.get_mut(key).expect("grid key");
                    e.0 += 1;
                    e.1 += u64::from(shock);
                }
            }
        }
        records.push(SynthRecord {
            date: date_of(day),
            registration_year: year + i32::from(lagged),
            sex,
            age,
            cause,
            shock,
        });
    };

    for w in 1..=53u8 {
        let (first, last) = week_days(year, WeekIndex::new(w).expect("week"));
        let idx = w as usize - 1;
        for (n, shock) in [(counts.baseline[idx], false), (counts.shock[idx], true)] {
            for _ in 0..n {
                let day = rng.random_range(first..=last);
                let cause = ILLNESS_CODES[rng.random_range(0..ILLNESS_CODES.len())];
                emit(&mut rng, day, cause, true, shock);
            }
        }
    }

    let illness_total = counts.total();
    let share = cfg.non_illness_share;
    let non_illness_total = (illness_total as f64 * share / (1.0 - share)).round() as u64;
    let ndays = days_in_year(year);
    for _ in 0..non_illness_total {
        let day = rng.random_range(1..=ndays);
        let cause = NON_ILLNESS_CODES[rng.random_range(0..NON_ILLNESS_CODES.len())];
        emit(&mut rng, day, cause, false, false);
    }

    YearOutput {
        records,
        truth: YearTruth {
            year,
            leap: is_leap(year),
            coefficients: cfg.coefficients_at(year),
            sigma: cfg.sigma_at(year),
            shock_mass: counts.shock_total(),
            illness_total,
            non_illness_total,
            late_registrations: late,
        },
        strata: per_stratum
            .into_iter()
            .map(|(k, (illness_total, shock))| StratumTruth {
                year,
                sex: k.sex,
                age_group: k.age_group,
                illness_total,
                shock,
            })
            .collect(),
    }
}

/// Generates the full registry in memory.
pub fn generate_records(cfg: &SynthConfig) -> Result<(Vec<SynthRecord>, GroundTruth)> {
    let counts = simulate_counts(cfg)?;
    let parts: Vec<YearOutput> = counts.par_iter().map(|c| year_registry(cfg, c)).collect();
    let mut records = Vec::new();
    let mut truth = GroundTruth {
        config: cfg.clone(),
        years: Vec::new(),
        strata: Vec::new(),
    };
    for p in parts {
        records.extend(p.records);
        truth.years.push(p.truth);
        truth.strata.extend(p.strata);
    }
    Ok((records, truth))
}

pub const REGISTRY_HEADER: [&str; 7] = ["occ_year", "occ_month", "occ_day", "reg_year", "sex", "age", "cause"];

/// Writes the registry in the default ingest layout and returns the ground
/// truth.
pub fn generate_registry<W: Write>(cfg: &SynthConfig, out: W) -> Result<GroundTruth> {
    let (records, truth) = generate_records(cfg)?;
    write_registry(&records, out)?;
    Ok(truth)
}

pub fn write_registry<W: Write>(records: &[SynthRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REGISTRY_HEADER)?;
    for r in records {
        let sex = match r.sex {
            Sex::Male => "1",
            Sex::Female => "2",
            Sex::Unknown => "9",
        };
        let age = r.age.map_or_else(|| "999".to_string(), |a| a.to_string());
        w.write_record([
            r.date.year().to_string().as_str(),
            r.date.month().to_string().as_str(),
            r.date.day().to_string().as_str(),
            r.registration_year.to_string().as_str(),
            sex,
            age.as_str(),
            r.cause,
        ])?;
    }
    w.flush().map_err(Error::Write)?;
    Ok(())
}

/// A population table for every generated year and grid stratum: a base
/// population growing at `growth` per year, split by the sex and age
/// mixes (unknown categories excluded).
pub fn synthetic_population(cfg: &SynthConfig, base: f64, growth: f64) -> Result<PopulationTable> {
    cfg.validate()?;
    let sex_known = cfg.sex_mix[0] + cfg.sex_mix[1];
    let age_known: f64 = cfg.age_mix[..9].iter().sum();
    let mut table = PopulationTable::default();
    for year in cfg.years() {
        let total = base * (1.0 + growth).powi(year - cfg.first_year());
        for key in StratumKey::full_grid() {
            let sex_share = match key.sex {
                SexGroup::Both => 1.0,
                SexGroup::Male => cfg.sex_mix[0] / sex_known,
                SexGroup::Female => cfg.sex_mix[1] / sex_known,
            };
            let age_share = match key.age_group {
                AgeGroup::All => 1.0,
                g => cfg.age_mix[g as usize] / age_known,
            };
            table.insert(year, key, (total * sex_share * age_share).max(1.0))?;
        }
    }
    Ok(table)
}

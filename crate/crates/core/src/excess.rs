//! Excess mortality: observed minus trend-forecast deaths, with intervals,
//! percentages and population rates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::aggregate::{series_total, AgeGroup, AnnualWeeklySeries, SexGroup, StratumKey};
use crate::calendar::FULL_WEEKS;
use crate::error::{Error, Result};
use crate::forecast::BaselineForecast;
use crate::polyfit::quantile_sorted;

/// Inclusive range of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period {
    pub start: i32,
    pub end: i32,
}

impl Period {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!("period {start}:{end} ends before it starts")));
        }
        Ok(Period { start, end })
    }

    pub fn year(y: i32) -> Self {
        Period { start: y, end: y }
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.start..=self.end
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start..=self.end).contains(&year)
    }

    /// Every single year, then every span from the first year to each later
    /// year: `2020, 2021, 2022, 2020-2021, 2020-2022`.
    pub fn standard_set(first: i32, last: i32) -> Vec<Period> {
        let mut out: Vec<Period> = (first..=last).map(Period::year).collect();
        out.extend((first + 1..=last).map(|e| Period { start: first, end: e }));
        out
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{}", self.start)
        } else {
            write!(f, "{}-{}", self.start, self.end)
        }
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse = |v: &str| {
            v.trim()
                .parse::<i32>()
                .map_err(|_| Error::Config(format!("invalid year range {s:?}")))
        };
        match s.split_once([':', '-']) {
            Some((a, b)) => Period::new(parse(a)?, parse(b)?),
            None => Ok(Period::year(parse(s)?)),
        }
    }
}

impl Serialize for Period {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearExcess {
    pub year: i32,
    pub stratum: StratumKey,
    pub psi: f64,
    pub expected_total: f64,
    pub observed_total: u64,
    pub sigma_forecast: f64,
    pub leap: bool,
    pub bias_factor: f64,
}

fn check_pair(series: &AnnualWeeklySeries, forecast: &BaselineForecast) -> Result<()> {
    if series.year != forecast.year || series.stratum != forecast.stratum {
        return Err(Error::Usage(format!(
            "observed {} {} does not match forecast {} {}",
            series.year, series.stratum, forecast.year, forecast.stratum
        )));
    }
    if series.counts.len() != FULL_WEEKS || forecast.expected.len() != FULL_WEEKS {
        return Err(Error::Usage("weekly vectors must have 52 entries".into()));
    }
    Ok(())
}

/// `Ψ = Σ_{w≤52}(d(w) − d̂(w)) + d(53) − d̂(53)` for one year.
pub fn excess_year(series: &AnnualWeeklySeries, forecast: &BaselineForecast) -> Result<YearExcess> {
    check_pair(series, forecast)?;
    let weekly: f64 = series
        .counts
        .iter()
        .zip(&forecast.expected)
        .map(|(&d, e)| d as f64 - e)
        .sum();
    let psi = weekly + series.week53_count as f64 - forecast.expected_week53;
    Ok(YearExcess {
        year: series.year,
        stratum: series.stratum,
        psi,
        expected_total: forecast.expected_total(),
        observed_total: series_total(series),
        sigma_forecast: forecast.sigma_forecast,
        leap: forecast.leap,
        bias_factor: forecast.bias_factor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodPoint {
    pub period: Period,
    pub stratum: StratumKey,
    pub psi: f64,
    pub expected_total: f64,
    pub observed_total: u64,
    pub delta_psi_pct: f64,
}

/// Sums yearly results over `period`. Every year of the period must be
/// present exactly once for the stratum of the first entry.
pub fn excess_period(yearly: &[YearExcess], period: Period) -> Result<PeriodPoint> {
    let stratum = yearly
        .first()
        .map(|y| y.stratum)
        .ok_or_else(|| Error::Period {
            period: period.to_string(),
            year: period.start,
        })?;
    let mut psi = 0.0;
    let mut expected_total = 0.0;
    let mut observed_total = 0;
    for year in period.years() {
        let y = yearly
            .iter()
            .find(|y| y.year == year && y.stratum == stratum)
            .ok_or_else(|| Error::Period {
                period: period.to_string(),
                year,
            })?;
        psi += y.psi;
        expected_total += y.expected_total;
        observed_total += y.observed_total;
    }
    Ok(PeriodPoint {
        period,
        stratum,
        psi,
        expected_total,
        observed_total,
        delta_psi_pct: 100.0 * psi / expected_total,
    })
}

/// Noise scale of one forecast year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalTerm {
    pub sigma: f64,
    pub leap: bool,
    pub bias: f64,
}

impl IntervalTerm {
    pub fn of(y: &YearExcess) -> Self {
        IntervalTerm {
            sigma: y.sigma_forecast,
            leap: y.leap,
            bias: y.bias_factor,
        }
    }

    fn partial_weight(&self) -> f64 {
        let days = if self.leap { 2.0 } else { 1.0 };
        days * self.bias / 7.0
    }
}

/// `Σ_years σ²·(52 + (ℓ·b/7)²)`: variance of the observed-minus-expected
/// sum under independent weekly noise.
pub fn noise_variance(terms: &[IntervalTerm]) -> f64 {
    terms
        .iter()
        .map(|t| t.sigma * t.sigma * (FULL_WEEKS as f64 + t.partial_weight().powi(2)))
        .sum()
}

pub fn z_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("confidence level {level} outside (0, 1)")));
    }
    let std = Normal::standard();
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// Normal-theory interval `psi ± z·√(noise variance + extra_variance)`.
///
/// `extra_variance` carries any uncertainty of the expected totals
/// themselves (see [`crate::forecast::expected_total_variance`]); pass 0 for
/// the pure noise interval.
pub fn excess_interval(psi: f64, terms: &[IntervalTerm], level: f64, extra_variance: f64) -> Result<(f64, f64)> {
    if let Some(t) = terms.iter().find(|t| !(t.sigma >= 0.0)) {
        return Err(Error::Parameter(format!("negative sigma forecast {}", t.sigma)));
    }
    let z = z_quantile(level)?;
    let half = z * (noise_variance(terms) + extra_variance.max(0.0)).sqrt();
    Ok((psi - half, psi + half))
}

/// Percentile interval from resampled residual noise.
///
/// `standardized` holds reference residuals divided by their year's σ.
/// Each replicate draws 53 of them with replacement per forecast year,
/// scales by that year's σ (week 53 also by `ℓ·b/7`) and, when
/// `extra_variance > 0`, adds a normal draw for the baseline uncertainty.
pub fn bootstrap_interval(
    psi: f64,
    standardized: &[f64],
    terms: &[IntervalTerm],
    level: f64,
    extra_variance: f64,
    replicates: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    z_quantile(level)?;
    if standardized.is_empty() {
        return Err(Error::Parameter("no residuals to resample".into()));
    }
    if replicates < 100 {
        return Err(Error::Parameter(format!("{replicates} bootstrap replicates are too few")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra_sd = extra_variance.max(0.0).sqrt();
    let normal = rand_distr::StandardNormal;
    let mut draws: Vec<f64> = (0..replicates)
        .map(|_| {
            let mut noise = 0.0;
            for t in terms {
                let mut s = 0.0;
                for _ in 0..FULL_WEEKS {
                    s += standardized[rng.random_range(0..standardized.len())];
                }
                s += t.partial_weight() * standardized[rng.random_range(0..standardized.len())];
                noise += t.sigma * s;
            }
            if extra_sd > 0.0 {
                let z: f64 = rng.sample(normal);
                noise += extra_sd * z;
            }
            noise
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&draws, (1.0 - level) / 2.0);
    let hi = quantile_sorted(&draws, (1.0 + level) / 2.0);
    // The observed-minus-expected error has the sign of the noise.
    Ok((psi - hi, psi - lo))
}

/// Population counts keyed by (year, stratum).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationTable {
    entries: BTreeMap<(i32, StratumKey), f64>,
}

#[derive(Debug, Deserialize)]
struct PopulationRow {
    year: i32,
    sex: SexGroup,
    age_group: AgeGroup,
    population: f64,
}

impl PopulationTable {
    pub fn insert(&mut self, year: i32, stratum: StratumKey, population: f64) -> Result<()> {
        if !(population > 0.0 && population.is_finite()) {
            return Err(Error::Config(format!(
                "population for {year} {stratum} must be positive, got {population}"
            )));
        }
        self.entries.insert((year, stratum), population);
        Ok(())
    }

    pub fn get(&self, year: i32, stratum: StratumKey) -> Option<f64> {
        self.entries.get(&(year, stratum)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean of the yearly populations over the period.
    pub fn denominator(&self, period: Period, stratum: StratumKey) -> Result<f64> {
        let mut sum = 0.0;
        for y in period.years() {
            sum += self.get(y, stratum).ok_or_else(|| Error::Denominator {
                period: period.to_string(),
                stratum: stratum.to_string(),
            })?;
        }
        Ok(sum / period.len() as f64)
    }

    /// Reads `year,sex,age_group,population` rows.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut table = PopulationTable::default();
        for row in rdr.deserialize::<PopulationRow>() {
            let row = row?;
            table.insert(row.year, StratumKey::new(row.sex, row.age_group), row.population)?;
        }
        Ok(table)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["year", "sex", "age_group", "population"])?;
        for ((year, key), pop) in &self.entries {
            w.write_record([
                year.to_string(),
                key.sex.to_string(),
                key.age_group.to_string(),
                pop.to_string(),
            ])?;
        }
        w.flush().map_err(Error::Write)?;
        Ok(())
    }
}

pub fn rate_per_100k(psi: f64, period: Period, stratum: StratumKey, pop: &PopulationTable) -> Result<f64> {
    Ok(1e5 * psi / pop.denominator(period, stratum)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Normal,
    Bootstrap,
}

impl FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(CiMethod::Normal),
            "bootstrap" => Ok(CiMethod::Bootstrap),
            other => Err(Error::Config(format!("unknown CI method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessEstimate {
    pub period: Period,
    pub stratum: StratumKey,
    pub psi: f64,
    pub psi_ci: (f64, f64),
    pub delta_psi_pct: f64,
    pub delta_psi_ci: (f64, f64),
    pub rate_per_100k: Option<f64>,
    pub rate_ci: Option<(f64, f64)>,
    pub expected_total: f64,
    pub observed_total: u64,
    pub level: f64,
    pub method: CiMethod,
}

impl ExcessEstimate {
    /// Scales the Ψ interval into percentage and rate intervals, treating
    /// the expected total and the population as known constants.
    pub fn assemble(
        point: &PeriodPoint,
        psi_ci: (f64, f64),
        level: f64,
        method: CiMethod,
        pop: Option<&PopulationTable>,
    ) -> Result<Self> {
        if !(point.expected_total > 0.0) {
            return Err(Error::Undefined(format!(
                "expected total {} for {} {} is not positive",
                point.expected_total, point.period, point.stratum
            )));
        }
        let pct = |v: f64| 100.0 * v / point.expected_total;
        let (rate_per_100k, rate_ci) = match pop {
            Some(pop) => {
                let denom = pop.denominator(point.period, point.stratum)?;
                let rate = |v: f64| 1e5 * v / denom;
                (Some(rate(point.psi)), Some((rate(psi_ci.0), rate(psi_ci.1))))
            }
            None => (None, None),
        };
        Ok(ExcessEstimate {
            period: point.period,
            stratum: point.stratum,
            psi: point.psi,
            psi_ci,
            delta_psi_pct: point.delta_psi_pct,
            delta_psi_ci: (pct(psi_ci.0), pct(psi_ci.1)),
            rate_per_100k,
            rate_ci,
            expected_total: point.expected_total,
            observed_total: point.observed_total,
            level,
            method,
        })
    }
}

/// Male over female excess rate for the same period and age group.
pub fn sex_ratio(male: &ExcessEstimate, female: &ExcessEstimate) -> Result<f64> {
    if male.period != female.period || male.stratum.age_group != female.stratum.age_group {
        return Err(Error::Usage("sex ratio needs matching period and age group".into()));
    }
    let (Some(m), Some(f)) = (male.rate_per_100k, female.rate_per_100k) else {
        return Err(Error::Undefined("rates need a population table".into()));
    };
    if !(f > 0.0) {
        return Err(Error::Undefined(format!(
            "female excess rate {f} for {} {} is not positive",
            female.period, female.stratum.age_group
        )));
    }
    Ok(m / f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyExcessPoint {
    pub week: u8,
    pub observed: u64,
    pub expected: f64,
    /// Omitted where the expected count is not positive.
    pub pct_excess: Option<f64>,
}

pub fn weekly_excess_curve(series: &AnnualWeeklySeries, forecast: &BaselineForecast) -> Result<Vec<WeeklyExcessPoint>> {
    check_pair(series, forecast)?;
    Ok(series
        .counts
        .iter()
        .zip(&forecast.expected)
        .enumerate()
        .map(|(i, (&observed, &expected))| WeeklyExcessPoint {
            week: i as u8 + 1,
            observed,
            expected,
            pct_excess: (expected > 0.0).then(|| 100.0 * (observed as f64 - expected) / expected),
        })
        .collect())
}

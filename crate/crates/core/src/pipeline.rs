//! Fit → trend → forecast → excess for one stratum, and for the grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{series_total, SeriesMap, StratumKey};
use crate::calendar::is_leap;
use crate::error::{Error, Result};
use crate::excess::{
    bootstrap_interval, excess_interval, excess_period, excess_year, CiMethod, ExcessEstimate, IntervalTerm,
    Period, PopulationTable, YearExcess,
};
use crate::forecast::{
    bias_factor, expected_total_variance, fit_param_trends, forecast_year, BaselineForecast, BiasFactor,
    ParamTrends,
};
use crate::polyfit::{ols_fit, FitOptions, PolyFit, SigmaConvention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub reference_years: (i32, i32),
    pub forecast_years: (i32, i32),
    pub periods: Vec<Period>,
    pub level: f64,
    pub ci_method: CiMethod,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    /// Residual σ defaults to the n − 5 convention here: the population
    /// convention understates the weekly noise and with it the interval.
    pub fit: FitOptions,
    /// Add the sampling variance of the trend-extrapolated baseline to the
    /// interval.
    pub baseline_uncertainty: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            reference_years: (1998, 2019),
            forecast_years: (2020, 2022),
            periods: Period::standard_set(2020, 2022),
            level: 0.95,
            ci_method: CiMethod::Normal,
            bootstrap_replicates: 2000,
            seed: 0,
            fit: FitOptions {
                sigma: SigmaConvention::ResidualDof,
                ..FitOptions::default()
            },
            baseline_uncertainty: true,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = self.reference_years;
        let (f0, f1) = self.forecast_years;
        if r1 < r0 || f1 < f0 {
            return Err(Error::Config("empty reference or forecast range".into()));
        }
        if f0 <= r1 {
            return Err(Error::Config(format!(
                "forecast years {f0}:{f1} must follow reference years {r0}:{r1}"
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("CI level {} outside (0, 1)", self.level)));
        }
        if let Some(p) = self.periods.iter().find(|p| p.start < f0 || p.end > f1) {
            return Err(Error::Config(format!("period {p} lies outside the forecast years {f0}:{f1}")));
        }
        Ok(())
    }

    pub fn reference(&self) -> std::ops::RangeInclusive<i32> {
        self.reference_years.0..=self.reference_years.1
    }

    pub fn forecast(&self) -> std::ops::RangeInclusive<i32> {
        self.forecast_years.0..=self.forecast_years.1
    }

    pub fn all_years(&self) -> std::ops::RangeInclusive<i32> {
        self.reference_years.0..=self.forecast_years.1
    }
}

/// Per-year fits of one stratum over a year range. A year without a series
/// or with a failing fit is flagged instead of aborting the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFlag {
    pub year: i32,
    pub stratum: StratumKey,
    pub reason: String,
}

pub fn fit_years(
    series: &SeriesMap,
    stratum: StratumKey,
    years: std::ops::RangeInclusive<i32>,
    opts: &FitOptions,
) -> (Vec<PolyFit>, Vec<FitFlag>) {
    let mut fits = Vec::new();
    let mut flags = Vec::new();
    for year in years {
        let flag = |reason: String| FitFlag { year, stratum, reason };
        match series.get(&(year, stratum)) {
            None => flags.push(flag("no series".into())),
            Some(s) => {
                if series_total(s) == 0 {
                    flags.push(flag("empty stratum".into()));
                }
                match ols_fit(s, opts) {
                    Ok(f) => fits.push(f),
                    Err(e) => flags.push(flag(e.to_string())),
                }
            }
        }
    }
    (fits, flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumModel {
    pub stratum: StratumKey,
    pub fits: Vec<PolyFit>,
    pub trends: ParamTrends,
    pub bias: BiasFactor,
    pub forecasts: Vec<BaselineForecast>,
    pub yearly: Vec<YearExcess>,
}

impl StratumModel {
    /// Reference residuals as observed-minus-fitted noise in σ units.
    pub fn standardized_noise(&self) -> Vec<f64> {
        self.fits
            .iter()
            .filter(|f| f.sigma > 0.0)
            .flat_map(|f| f.residuals.iter().map(move |r| -r / f.sigma))
            .collect()
    }

    pub fn forecast(&self, year: i32) -> Option<&BaselineForecast> {
        self.forecasts.iter().find(|f| f.year == year)
    }

    /// Variance of the summed baseline over `period` from the reference
    /// fits' noise.
    pub fn baseline_variance(&self, period: Period) -> f64 {
        let reference: Vec<(i32, f64)> = self.fits.iter().map(|f| (f.year, f.sigma)).collect();
        let targets: Vec<(i32, bool)> = period.years().map(|y| (y, is_leap(y))).collect();
        expected_total_variance(&reference, &targets, self.bias.value)
    }
}

/// Fits the reference years, extrapolates the trends and evaluates the
/// yearly excess of every forecast year of one stratum.
pub fn model_stratum(series: &SeriesMap, stratum: StratumKey, cfg: &EstimationConfig) -> Result<StratumModel> {
    let (fits, flags) = fit_years(series, stratum, cfg.reference(), &cfg.fit);
    if let Some(f) = flags.iter().find(|f| f.reason != "empty stratum") {
        return Err(Error::Fit(format!("{} {}: {}", f.year, f.stratum, f.reason)));
    }
    let trends = fit_param_trends(&fits)?;
    let pairs: Vec<_> = fits
        .iter()
        .map(|f| (&series[&(f.year, stratum)], f))
        .collect();
    let bias = bias_factor(&pairs)?;

    let mut forecasts = Vec::new();
    let mut yearly = Vec::new();
    for year in cfg.forecast() {
        let fc = forecast_year(&trends, bias.value, year, is_leap(year));
        let observed = series.get(&(year, stratum)).ok_or_else(|| Error::Period {
            period: format!("{}:{}", cfg.forecast_years.0, cfg.forecast_years.1),
            year,
        })?;
        yearly.push(excess_year(observed, &fc)?);
        forecasts.push(fc);
    }
    Ok(StratumModel {
        stratum,
        fits,
        trends,
        bias,
        forecasts,
        yearly,
    })
}

fn period_seed(base: u64, period: Period, stratum: StratumKey) -> u64 {
    let s = (stratum.sex as u64) * 16 + stratum.age_group as u64;
    base ^ (s << 40) ^ ((period.start as u64) << 20) ^ period.end as u64
}

/// Point estimate, interval, percentage and rate for one period.
pub fn estimate_period(
    model: &StratumModel,
    period: Period,
    cfg: &EstimationConfig,
    pop: Option<&PopulationTable>,
) -> Result<ExcessEstimate> {
    let point = excess_period(&model.yearly, period)?;
    let terms: Vec<IntervalTerm> = model
        .yearly
        .iter()
        .filter(|y| period.contains(y.year))
        .map(IntervalTerm::of)
        .collect();
    let extra = if cfg.baseline_uncertainty {
        model.baseline_variance(period)
    } else {
        0.0
    };
    let psi_ci = match cfg.ci_method {
        CiMethod::Normal => excess_interval(point.psi, &terms, cfg.level, extra)?,
        CiMethod::Bootstrap => bootstrap_interval(
            point.psi,
            &model.standardized_noise(),
            &terms,
            cfg.level,
            extra,
            cfg.bootstrap_replicates,
            period_seed(cfg.seed, period, model.stratum),
        )?,
    };
    ExcessEstimate::assemble(&point, psi_ci, cfg.level, cfg.ci_method, pop)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumFailure {
    pub stratum: StratumKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub models: Vec<StratumModel>,
    /// Ordered by (period as configured, stratum as requested).
    pub estimates: Vec<ExcessEstimate>,
    pub failures: Vec<StratumFailure>,
}

impl GridRun {
    pub fn estimate(&self, period: Period, stratum: StratumKey) -> Option<&ExcessEstimate> {
        self.estimates
            .iter()
            .find(|e| e.period == period && e.stratum == stratum)
    }

    pub fn model(&self, stratum: StratumKey) -> Option<&StratumModel> {
        self.models.iter().find(|m| m.stratum == stratum)
    }
}

/// Evaluates every (period, stratum) cell. Strata run in parallel; output
/// order is fixed by the configuration. A stratum that cannot be modeled
/// is reported in `failures`; a missing population denominator is fatal.
pub fn run_grid(
    series: &SeriesMap,
    strata: &[StratumKey],
    cfg: &EstimationConfig,
    pop: Option<&PopulationTable>,
) -> Result<GridRun> {
    cfg.validate()?;
    let modeled: Vec<Result<StratumModel>> = strata
        .par_iter()
        .map(|&s| model_stratum(series, s, cfg))
        .collect();
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for (stratum, m) in strata.iter().zip(modeled) {
        match m {
            Ok(m) => models.push(m),
            Err(e) => {
                log::warn!("{stratum}: {e}");
                failures.push(StratumFailure {
                    stratum: *stratum,
                    reason: e.to_string(),
                })
            }
        }
    }

    let cells: Vec<(Period, &StratumModel)> = cfg
        .periods
        .iter()
        .flat_map(|&p| models.iter().map(move |m| (p, m)))
        .collect();
    let estimates = cells
        .par_iter()
        .map(|(p, m)| estimate_period(m, *p, cfg, pop))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridRun {
        models,
        estimates,
        failures,
    })
}

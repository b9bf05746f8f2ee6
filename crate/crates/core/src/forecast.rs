//! Trend-extrapolated baselines.
//!
//! Each of the five quartic coefficients and the residual σ gets its own
//! straight line through the reference years; a forecast year's baseline is
//! the quartic whose coefficients are read off those lines. The partial
//! week 53 is the quartic one step past the fitted range, scaled by the
//! share of a week it covers and by the bias factor `b`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregate::{AnnualWeeklySeries, StratumKey};
use crate::calendar::{is_leap, FULL_WEEKS};
use crate::error::{Error, Result};
use crate::polyfit::{evaluate, Coefficients, PolyFit, QuarticDesign, N_COEF};

pub const MIN_REFERENCE_YEARS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameter {
    Alpha,
    Beta1,
    Beta2,
    Beta3,
    Beta4,
    Sigma,
}

impl Parameter {
    pub const ALL: [Parameter; 6] = [
        Parameter::Alpha,
        Parameter::Beta1,
        Parameter::Beta2,
        Parameter::Beta3,
        Parameter::Beta4,
        Parameter::Sigma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Parameter::Alpha => "alpha",
            Parameter::Beta1 => "beta1",
            Parameter::Beta2 => "beta2",
            Parameter::Beta3 => "beta3",
            Parameter::Beta4 => "beta4",
            Parameter::Sigma => "sigma",
        }
    }

    fn of(self, fit: &PolyFit) -> f64 {
        match self {
            Parameter::Sigma => fit.sigma,
            p => fit.coefficients[p as usize],
        }
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `value(t) ≈ slope·t + intercept` over the reference years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamTrend {
    pub parameter: Parameter,
    pub slope: f64,
    pub intercept: f64,
    pub reference_years: (i32, i32),
    /// Standard deviation of the yearly values around the line (n − 2).
    pub residual_sd: f64,
}

impl ParamTrend {
    pub fn at(&self, year: i32) -> f64 {
        self.slope * f64::from(year) + self.intercept
    }
}

/// Simple OLS line through `(x, y)` pairs, computed about the mean of `x`
/// so calendar years do not cost precision. Returns `(slope, intercept,
/// residual sd)`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Trend {
            required: 2,
            available: n,
        });
    }
    let nf = n as f64;
    let xbar = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let ybar = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("trend needs at least two distinct years".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - ybar - slope * (p.0 - xbar)).powi(2))
        .sum();
    let residual_sd = if n > 2 { (sse / (nf - 2.0)).sqrt() } else { 0.0 };
    Ok((slope, intercept, residual_sd))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTrends {
    pub stratum: StratumKey,
    pub reference_years: (i32, i32),
    /// In [`Parameter::ALL`] order.
    pub trends: Vec<ParamTrend>,
}

impl ParamTrends {
    pub fn get(&self, p: Parameter) -> &ParamTrend {
        &self.trends[p as usize]
    }

    pub fn coefficients_at(&self, year: i32) -> Coefficients {
        let mut c = [0.0; N_COEF];
        for (j, v) in c.iter_mut().enumerate() {
            *v = self.trends[j].at(year);
        }
        c
    }

    /// Flat trends through one fit.
    pub fn constant(fit: &PolyFit) -> Self {
        ParamTrends {
            stratum: fit.stratum,
            reference_years: (fit.year, fit.year),
            trends: Parameter::ALL
                .iter()
                .map(|&p| ParamTrend {
                    parameter: p,
                    slope: 0.0,
                    intercept: p.of(fit),
                    reference_years: (fit.year, fit.year),
                    residual_sd: 0.0,
                })
                .collect(),
        }
    }
}

/// One line per coefficient plus σ through the per-year fits.
pub fn fit_param_trends(fits: &[PolyFit]) -> Result<ParamTrends> {
    if fits.len() < MIN_REFERENCE_YEARS {
        return Err(Error::Trend {
            required: MIN_REFERENCE_YEARS,
            available: fits.len(),
        });
    }
    let stratum = fits[0].stratum;
    if fits.iter().any(|f| f.stratum != stratum) {
        return Err(Error::Usage("reference fits span several strata".into()));
    }
    let first = fits.iter().map(|f| f.year).min().unwrap_or_default();
    let last = fits.iter().map(|f| f.year).max().unwrap_or_default();
    let trends = Parameter::ALL
        .iter()
        .map(|&p| {
            let pts: Vec<(f64, f64)> = fits.iter().map(|f| (f64::from(f.year), p.of(f))).collect();
            let (slope, intercept, residual_sd) = fit_line(&pts)?;
            Ok(ParamTrend {
                parameter: p,
                slope,
                intercept,
                reference_years: (first, last),
                residual_sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamTrends {
        stratum,
        reference_years: (first, last),
        trends,
    })
}

/// Year-on-year growth of the shift parameter, `100·m / (m·t + c)` percent.
pub fn alpha_growth_rate(trend: &ParamTrend, year: i32) -> Result<f64> {
    let level = trend.at(year);
    if level == 0.0 {
        return Err(Error::Singularity(year));
    }
    Ok(100.0 * trend.slope / level)
}

fn partial_share(leap: bool) -> f64 {
    if leap {
        2.0 / 7.0
    } else {
        1.0 / 7.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFactor {
    pub value: f64,
    /// `(year, d(53) / (d̂(53)·ℓ/7))` for every year used.
    pub ratios: Vec<(i32, f64)>,
    /// Years whose fitted curve is not positive at week 53.
    pub excluded_years: Vec<i32>,
}

/// Mean ratio of observed week-53 deaths to the scaled week-53 fit.
pub fn bias_factor(reference: &[(&AnnualWeeklySeries, &PolyFit)]) -> Result<BiasFactor> {
    let mut ratios = Vec::new();
    let mut excluded_years = Vec::new();
    for (series, fit) in reference {
        if series.year != fit.year || series.stratum != fit.stratum {
            return Err(Error::Usage(format!(
                "series {} {} paired with fit {} {}",
                series.year, series.stratum, fit.year, fit.stratum
            )));
        }
        let at53 = fit.at(53.0);
        if at53 > 0.0 {
            let scaled = at53 * partial_share(series.leap);
            ratios.push((series.year, series.week53_count as f64 / scaled));
        } else {
            excluded_years.push(series.year);
        }
    }
    if ratios.is_empty() {
        return Err(Error::BiasFactor);
    }
    let value = ratios.iter().map(|r| r.1).sum::<f64>() / ratios.len() as f64;
    Ok(BiasFactor {
        value,
        ratios,
        excluded_years,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineForecast {
    pub year: i32,
    pub stratum: StratumKey,
    pub coefficients: Coefficients,
    pub sigma_forecast: f64,
    /// Expected deaths for weeks 1..=52.
    pub expected: Vec<f64>,
    pub expected_week53: f64,
    pub bias_factor: f64,
    pub leap: bool,
    pub warnings: Vec<String>,
}

impl BaselineForecast {
    pub fn expected_total(&self) -> f64 {
        self.expected.iter().sum::<f64>() + self.expected_week53
    }
}

/// Baseline for `year` read off the trend lines.
pub fn forecast_year(trends: &ParamTrends, b: f64, year: i32, leap: bool) -> BaselineForecast {
    let coefficients = trends.coefficients_at(year);
    let mut warnings = Vec::new();
    let mut sigma_forecast = trends.get(Parameter::Sigma).at(year);
    if sigma_forecast < 0.0 {
        warnings.push(format!(
            "extrapolated sigma {sigma_forecast:.6} for {year} clamped to 0"
        ));
        log::warn!("{}: sigma forecast for {year} is negative, clamped to 0", trends.stratum);
        sigma_forecast = 0.0;
    }
    let expected: Vec<f64> = (1..=FULL_WEEKS).map(|w| evaluate(&coefficients, w as f64)).collect();
    let expected_week53 = evaluate(&coefficients, 53.0) * partial_share(leap) * b;
    BaselineForecast {
        year,
        stratum: trends.stratum,
        coefficients,
        sigma_forecast,
        expected,
        expected_week53,
        bias_factor: b,
        leap,
        warnings,
    }
}

/// Forecasts a held-out reference year from the remaining reference years.
pub fn backtest(reference: &[(&AnnualWeeklySeries, &PolyFit)], holdout: i32) -> Result<BaselineForecast> {
    let rest: Vec<_> = reference
        .iter()
        .filter(|(s, _)| s.year != holdout)
        .copied()
        .collect();
    if rest.len() == reference.len() {
        return Err(Error::Usage(format!("holdout year {holdout} is not a reference year")));
    }
    let fits: Vec<PolyFit> = rest.iter().map(|(_, f)| (*f).clone()).collect();
    let trends = fit_param_trends(&fits)?;
    let b = bias_factor(&rest)?;
    Ok(forecast_year(&trends, b.value, holdout, is_leap(holdout)))
}

/// Sampling variance of the summed expected totals of `targets`, carried
/// from the noise in the reference-year fits through the trend lines.
///
/// The expected total of year `t` is linear in the reference counts:
/// each coefficient line weights year `y` by
/// `λ_y(t) = 1/n + (t − t̄)(y − t̄)/Sxx`, and the annual total is the
/// functional `Σ_{w≤52} d̂(w) + (ℓ_t·b/7)·d̂(53)` of each year's fit. With
/// independent weekly noise of sd `σ_y` in year `y` the variance is
/// `Σ_y σ_y² · uᵧᵀ(XᵀX)⁻¹uᵧ` where `uᵧ = Σ_t λ_y(t)·functional_t`.
pub fn expected_total_variance(reference: &[(i32, f64)], targets: &[(i32, bool)], b: f64) -> f64 {
    let n = reference.len();
    if n == 0 || targets.is_empty() {
        return 0.0;
    }
    let design = QuarticDesign::weekly();
    let tbar = reference.iter().map(|r| f64::from(r.0)).sum::<f64>() / n as f64;
    let sxx: f64 = reference.iter().map(|r| (f64::from(r.0) - tbar).powi(2)).sum();
    let mut total = 0.0;
    for &(y, sigma) in reference {
        let dy = f64::from(y) - tbar;
        let mut full_weight = 0.0;
        let mut partial_weight = 0.0;
        for &(t, leap) in targets {
            let lambda = 1.0 / n as f64
                + if sxx > 0.0 {
                    (f64::from(t) - tbar) * dy / sxx
                } else {
                    0.0
                };
            full_weight += lambda;
            partial_weight += lambda * partial_share(leap) * b;
        }
        let mut functional: Vec<(f64, f64)> = (1..=FULL_WEEKS).map(|w| (w as f64, full_weight)).collect();
        functional.push((53.0, partial_weight));
        total += sigma * sigma * design.quadratic_form(&functional);
    }
    total
}

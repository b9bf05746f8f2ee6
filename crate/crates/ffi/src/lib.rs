//! C ABI over the exmort library.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`ExmStatus`]; results go through
//!   out-pointers, which are written only on `EXM_OK`.
//! * After a failure, [`exm_last_error_message`] returns a description,
//!   owned by the library and valid until the next call on the same thread.
//! * Objects are opaque handles created by `*_new` / `*_run` and released
//!   with the matching `*_free`; passing NULL to a `*_free` is a no-op.
//! * Undefined floating-point results (an adjusted R² of a constant series,
//!   a rate without population) are reported as NaN.
//! * Panics never cross the boundary; they surface as `EXM_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use chrono::NaiveDate;
use exmort::aggregate::{build_series, AgeGroup, AnnualWeeklySeries, SexGroup, StratumKey};
use exmort::config::{ConfigFile, Overrides, RunConfig};
use exmort::excess::{excess_interval, ExcessEstimate, IntervalTerm, PopulationTable};
use exmort::forecast::{alpha_growth_rate, Parameter, ParamTrend};
use exmort::ingest::{default_non_illness_prefixes, read_canonical_file, CauseClass};
use exmort::pipeline::run_grid;
use exmort::polyfit::{anderson_darling, ols_fit, FitOptions, PolyFit, SigmaConvention};
use exmort::{classify_cause, week_of, Error};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Fit = 3,
    Config = 4,
    Io = 5,
    Singular = 6,
    Undefined = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> ExmStatus {
    match e {
        Error::Ingest(_) | Error::Io { .. } | Error::Write(_) | Error::Csv(_) | Error::Json(_) => ExmStatus::Io,
        Error::Config(_) | Error::MissingColumn(_) | Error::Usage(_) | Error::Period { .. } | Error::Denominator { .. } => {
            ExmStatus::Config
        }
        Error::Fit(_) | Error::Trend { .. } | Error::BiasFactor | Error::Degenerate(_) => ExmStatus::Fit,
        Error::Singularity(_) => ExmStatus::Singular,
        Error::Undefined(_) => ExmStatus::Undefined,
        Error::Parameter(_) => ExmStatus::InvalidArgument,
    }
}

struct Fail(ExmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ExmStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(ExmStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics to a status and clearing the
/// error message on success.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> ExmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ExmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ExmStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Message for the most recent failure on this thread; empty after a
/// success. Never NULL.
#[no_mangle]
pub extern "C" fn exm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn exm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Standardized week (1..=53) of a calendar date.
///
/// # Safety
/// `out_week` must be NULL or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn exm_week_of(year: i32, month: u32, day: u32, out_week: *mut u8) -> ExmStatus {
    guard(|| {
        let out_week = out(out_week, "out_week")?;
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .ok_or_else(|| invalid(format!("invalid date {year}-{month:02}-{day:02}")))?;
        *out_week = week_of(date).get();
        Ok(())
    })
}

/// Sets `*out_non_illness` to 1 for a non-illness cause, 0 otherwise.
/// With `prefixes` NULL the default external-cause prefixes are used.
///
/// # Safety
/// `code` must be a NUL-terminated string; `prefixes` NULL or an array of
/// `n_prefixes` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn exm_classify_cause(
    code: *const c_char,
    prefixes: *const *const c_char,
    n_prefixes: usize,
    out_non_illness: *mut i32,
) -> ExmStatus {
    guard(|| {
        let out_non_illness = out(out_non_illness, "out_non_illness")?;
        let code = string(code, "code")?;
        let list: Vec<String> = if prefixes.is_null() {
            default_non_illness_prefixes()
        } else {
            slice(prefixes, n_prefixes, "prefixes")?
                .iter()
                .map(|&p| string(p, "prefix").map(str::to_string))
                .collect::<Result<_, _>>()?
        };
        let class = classify_cause(code, &list).map_err(|r| invalid(r.to_string()))?;
        *out_non_illness = i32::from(class == CauseClass::NonIllness);
        Ok(())
    })
}

/// Residual dispersion convention.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExmSigma {
    /// Divide by n.
    Population = 0,
    /// Divide by n - 5.
    ResidualDof = 1,
}

/// Opaque fitted quartic for one year.
pub struct ExmPolyFit(PolyFit);

/// Scalar diagnostics of a fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ExmFitStats {
    pub sigma: f64,
    pub adj_r2: f64,
    pub ad_stat: f64,
    pub ad_pvalue: f64,
    pub band_lo_offset: f64,
    pub band_hi_offset: f64,
}

/// Fits the quartic to 52 weekly counts.
///
/// # Safety
/// `counts` must point to `n_counts` readable values; `out_fit` must be
/// writable. The handle must be released with [`exm_polyfit_free`].
#[no_mangle]
pub unsafe extern "C" fn exm_polyfit_new(
    year: i32,
    counts: *const u64,
    n_counts: usize,
    week53_count: u64,
    sigma: ExmSigma,
    out_fit: *mut *mut ExmPolyFit,
) -> ExmStatus {
    guard(|| {
        let out_fit = out(out_fit, "out_fit")?;
        let counts = slice(counts, n_counts, "counts")?.to_vec();
        let series = AnnualWeeklySeries::from_counts(year, StratumKey::TOTAL, counts, week53_count)?;
        let opts = FitOptions {
            sigma: match sigma {
                ExmSigma::Population => SigmaConvention::Population,
                ExmSigma::ResidualDof => SigmaConvention::ResidualDof,
            },
            ..FitOptions::default()
        };
        let fit = ols_fit(&series, &opts)?;
        *out_fit = Box::into_raw(Box::new(ExmPolyFit(fit)));
        Ok(())
    })
}

/// Writes `(alpha, beta1, beta2, beta3, beta4)` into `out5`.
///
/// # Safety
/// `fit` must be a live handle; `out5` must hold 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn exm_polyfit_coefficients(fit: *const ExmPolyFit, out5: *mut f64) -> ExmStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        if out5.is_null() {
            return Err(null("out5"));
        }
        std::slice::from_raw_parts_mut(out5, 5).copy_from_slice(&fit.0.coefficients);
        Ok(())
    })
}

unsafe fn copy_weekly(src: &[f64], dst: *mut f64, len: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null("out"));
    }
    if len != src.len() {
        return Err(invalid(format!("buffer holds {len} values, need {}", src.len())));
    }
    std::slice::from_raw_parts_mut(dst, len).copy_from_slice(src);
    Ok(())
}

/// Fitted values for weeks 1..=52; `len` must be 52.
///
/// # Safety
/// `fit` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn exm_polyfit_fitted(fit: *const ExmPolyFit, out: *mut f64, len: usize) -> ExmStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_weekly(&fit.0.fitted, out, len)
    })
}

/// Residuals (fitted minus observed) for weeks 1..=52; `len` must be 52.
///
/// # Safety
/// `fit` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn exm_polyfit_residuals(fit: *const ExmPolyFit, out: *mut f64, len: usize) -> ExmStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| null("fit"))?;
        copy_weekly(&fit.0.residuals, out, len)
    })
}

/// # Safety
/// `fit` must be a live handle; `out_stats` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exm_polyfit_stats(fit: *const ExmPolyFit, out_stats: *mut ExmFitStats) -> ExmStatus {
    guard(|| {
        let fit = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        *out(out_stats, "out_stats")? = ExmFitStats {
            sigma: fit.sigma,
            adj_r2: fit.adj_r2.unwrap_or(f64::NAN),
            ad_stat: fit.ad_stat.unwrap_or(f64::NAN),
            ad_pvalue: fit.ad_pvalue.unwrap_or(f64::NAN),
            band_lo_offset: fit.band_lo_offset,
            band_hi_offset: fit.band_hi_offset,
        };
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle from [`exm_polyfit_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn exm_polyfit_free(fit: *mut ExmPolyFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Anderson–Darling normality test with estimated mean and variance.
/// Either output pointer may be NULL.
///
/// # Safety
/// `sample` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn exm_anderson_darling(
    sample: *const f64,
    n: usize,
    out_statistic: *mut f64,
    out_pvalue: *mut f64,
) -> ExmStatus {
    guard(|| {
        let ad = anderson_darling(slice(sample, n, "sample")?)?;
        if let Some(s) = out_statistic.as_mut() {
            *s = ad.statistic;
        }
        if let Some(p) = out_pvalue.as_mut() {
            *p = ad.p_value;
        }
        Ok(())
    })
}

/// Yearly growth of the baseline level in percent, `100·m / (m·year + c)`
/// for the trend line `m·year + c`.
///
/// # Safety
/// `out_pct` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exm_alpha_growth_rate(slope: f64, intercept: f64, year: i32, out_pct: *mut f64) -> ExmStatus {
    guard(|| {
        let out_pct = out(out_pct, "out_pct")?;
        let trend = ParamTrend {
            parameter: Parameter::Alpha,
            slope,
            intercept,
            reference_years: (year, year),
            residual_sd: 0.0,
        };
        *out_pct = alpha_growth_rate(&trend, year)?;
        Ok(())
    })
}

/// Normal interval for a period excess total from per-year forecast σ,
/// leap flags and week-53 bias factors, plus any extra variance.
///
/// # Safety
/// `sigmas`, `leap` and `bias` must each point to `n_years` values;
/// `out_lo` and `out_hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exm_excess_interval(
    psi: f64,
    sigmas: *const f64,
    leap: *const u8,
    bias: *const f64,
    n_years: usize,
    level: f64,
    extra_variance: f64,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> ExmStatus {
    guard(|| {
        let sigmas = slice(sigmas, n_years, "sigmas")?;
        let leap = slice(leap, n_years, "leap")?;
        let bias = slice(bias, n_years, "bias")?;
        let terms: Vec<IntervalTerm> = (0..n_years)
            .map(|i| IntervalTerm {
                sigma: sigmas[i],
                leap: leap[i] != 0,
                bias: bias[i],
            })
            .collect();
        let (lo, hi) = excess_interval(psi, &terms, level, extra_variance)?;
        *out(out_lo, "out_lo")? = lo;
        *out(out_hi, "out_hi")? = hi;
        Ok(())
    })
}

/// One row of pipeline output. Sex: 0 both, 1 male, 2 female. Age group:
/// 0..=8 for the brackets 0-5 … 70+, 9 for all ages.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ExmEstimate {
    pub period_start: i32,
    pub period_end: i32,
    pub sex: i32,
    pub age_group: i32,
    pub psi: f64,
    pub psi_lo: f64,
    pub psi_hi: f64,
    pub delta_psi_pct: f64,
    pub delta_psi_lo: f64,
    pub delta_psi_hi: f64,
    pub rate_per_100k: f64,
    pub rate_lo: f64,
    pub rate_hi: f64,
    pub expected_total: f64,
    pub observed_total: u64,
}

fn sex_code(s: SexGroup) -> i32 {
    match s {
        SexGroup::Both => 0,
        SexGroup::Male => 1,
        SexGroup::Female => 2,
    }
}

fn age_code(a: AgeGroup) -> i32 {
    AgeGroup::GRID.iter().position(|&g| g == a).map_or(-1, |i| i as i32)
}

impl From<&ExcessEstimate> for ExmEstimate {
    fn from(e: &ExcessEstimate) -> Self {
        ExmEstimate {
            period_start: e.period.start,
            period_end: e.period.end,
            sex: sex_code(e.stratum.sex),
            age_group: age_code(e.stratum.age_group),
            psi: e.psi,
            psi_lo: e.psi_ci.0,
            psi_hi: e.psi_ci.1,
            delta_psi_pct: e.delta_psi_pct,
            delta_psi_lo: e.delta_psi_ci.0,
            delta_psi_hi: e.delta_psi_ci.1,
            rate_per_100k: e.rate_per_100k.unwrap_or(f64::NAN),
            rate_lo: e.rate_ci.map_or(f64::NAN, |c| c.0),
            rate_hi: e.rate_ci.map_or(f64::NAN, |c| c.1),
            expected_total: e.expected_total,
            observed_total: e.observed_total,
        }
    }
}

/// Opaque set of pipeline estimates.
pub struct ExmResults(Vec<ExmEstimate>);

/// Runs the full estimation on a canonical record file. `config_toml`
/// (TOML text, same format as the command-line config) and
/// `population_path` may be NULL.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out_results` must be
/// writable. Release the handle with [`exm_results_free`].
#[no_mangle]
pub unsafe extern "C" fn exm_pipeline_run(
    canonical_path: *const c_char,
    config_toml: *const c_char,
    population_path: *const c_char,
    out_results: *mut *mut ExmResults,
) -> ExmStatus {
    guard(|| {
        let out_results = out(out_results, "out_results")?;
        let path = Path::new(string(canonical_path, "canonical_path")?);
        let file = if config_toml.is_null() {
            ConfigFile::default()
        } else {
            ConfigFile::parse(string(config_toml, "config_toml")?)?
        };
        let overrides = Overrides {
            population: if population_path.is_null() {
                None
            } else {
                Some(string(population_path, "population_path")?.into())
            },
            ..Overrides::default()
        };
        let run = RunConfig::resolve(&file, &overrides)?;
        let pop = match &run.population {
            Some(p) => {
                let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
                Some(PopulationTable::read_csv(std::io::BufReader::new(f))?)
            }
            None => None,
        };
        let records = read_canonical_file(path)?;
        let series = build_series(&records, run.estimation.all_years(), &run.strata)?;
        let grid = run_grid(&series, &run.strata, &run.estimation, pop.as_ref())?;
        if let Some(f) = grid.failures.first() {
            return Err(Fail(ExmStatus::Fit, format!("{}: {}", f.stratum, f.reason)));
        }
        let rows = grid.estimates.iter().map(ExmEstimate::from).collect();
        *out_results = Box::into_raw(Box::new(ExmResults(rows)));
        Ok(())
    })
}

/// Number of estimates; 0 for NULL.
///
/// # Safety
/// `results` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn exm_results_len(results: *const ExmResults) -> usize {
    results.as_ref().map_or(0, |r| r.0.len())
}

/// # Safety
/// `results` must be a live handle; `out_estimate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exm_results_get(
    results: *const ExmResults,
    index: usize,
    out_estimate: *mut ExmEstimate,
) -> ExmStatus {
    guard(|| {
        let r = results.as_ref().ok_or_else(|| null("results"))?;
        let e = r
            .0
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range (len {})", r.0.len())))?;
        *out(out_estimate, "out_estimate")? = *e;
        Ok(())
    })
}

/// # Safety
/// `results` must be NULL or a handle from [`exm_pipeline_run`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn exm_results_free(results: *mut ExmResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

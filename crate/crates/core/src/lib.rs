//! Illness-related excess mortality from weekly death registries.
//!
//! Pre-epidemic years are each fitted with a quartic seasonal curve over 52
//! standardized weeks; the fitted coefficients and residual spread are
//! trended linearly across years and extrapolated into the epidemic years,
//! and observed deaths are contrasted with that baseline per sex and age
//! group.
//!
//! Stages, each usable on its own:
//!
//! * [`ingest`] – raw registry rows to classified, week-indexed records
//! * [`aggregate`] – stratified annual weekly series
//! * [`polyfit`] – quartic OLS fit and residual diagnostics
//! * [`forecast`] – parameter trends, week-53 bias factor, baselines
//! * [`excess`] – excess deaths, percentages, rates and intervals
//! * [`synth`] – synthetic registries with known ground truth
//! * [`pipeline`] and [`report`] – orchestration and output files

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod calendar;
pub mod config;
pub mod error;
pub mod excess;
pub mod forecast;
pub mod ingest;
pub mod pipeline;
pub mod polyfit;
pub mod report;
pub mod svg;
pub mod synth;

pub use aggregate::{build_series, series_total, AgeGroup, AnnualWeeklySeries, SexGroup, StratumKey};
pub use calendar::{week_of, WeekIndex};
pub use error::{Error, Result};
pub use excess::{ExcessEstimate, Period, PopulationTable};
pub use forecast::{BaselineForecast, ParamTrend};
pub use ingest::{classify_cause, parse_registry, CauseClass, DeathRecord, IngestSchema};
pub use polyfit::{ols_fit, PolyFit};

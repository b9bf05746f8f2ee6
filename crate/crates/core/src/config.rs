//! TOML run configuration and its resolution against command-line
//! overrides.
//!
//! ```toml
//! [ingest]
//! delimiter = ","
//! encoding = "utf-8"
//! non_illness_prefixes = ["V", "W", "X", "Y"]
//! [ingest.columns]
//! year = "occ_year"
//!
//! [run]
//! reference_years = "1998:2019"
//! forecast_years = "2020:2022"
//! strata = "all"
//! ci_level = 0.95
//! ci_method = "normal"
//! population = "population.csv"
//!
//! [simulate]
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::StratumKey;
use crate::error::{Error, Result};
use crate::excess::{CiMethod, Period};
use crate::ingest::IngestSchema;
use crate::pipeline::EstimationConfig;
use crate::polyfit::SigmaConvention;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub reference_years: Option<Period>,
    pub forecast_years: Option<Period>,
    pub periods: Option<Vec<Period>>,
    pub strata: Option<String>,
    pub ci_level: Option<f64>,
    pub ci_method: Option<CiMethod>,
    pub bootstrap_replicates: Option<usize>,
    pub sigma: Option<SigmaConvention>,
    pub baseline_uncertainty: Option<bool>,
    pub population: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub ingest: IngestSchema,
    pub run: RunSection,
    pub simulate: SynthConfig,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative population paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ConfigFile::parse(&text)?;
        if let (Some(pop), Some(dir)) = (cfg.run.population.as_mut(), path.parent()) {
            if pop.is_relative() {
                *pop = dir.join(&*pop);
            }
        }
        Ok(cfg)
    }
}

/// Values given on the command line; each one beats the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub reference_years: Option<Period>,
    pub forecast_years: Option<Period>,
    pub strata: Option<String>,
    pub ci_level: Option<f64>,
    pub ci_method: Option<CiMethod>,
    pub population: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub estimation: EstimationConfig,
    pub strata: Vec<StratumKey>,
    pub population: Option<PathBuf>,
}

impl RunConfig {
    pub fn resolve(file: &ConfigFile, cli: &Overrides) -> Result<Self> {
        let run = &file.run;
        let defaults = EstimationConfig::default();
        let reference = cli
            .reference_years
            .or(run.reference_years)
            .unwrap_or(Period {
                start: defaults.reference_years.0,
                end: defaults.reference_years.1,
            });
        let forecast = cli
            .forecast_years
            .or(run.forecast_years)
            .unwrap_or(Period {
                start: defaults.forecast_years.0,
                end: defaults.forecast_years.1,
            });
        let periods = run
            .periods
            .clone()
            .unwrap_or_else(|| Period::standard_set(forecast.start, forecast.end));
        let mut fit = defaults.fit;
        if let Some(s) = run.sigma {
            fit.sigma = s;
        }
        let estimation = EstimationConfig {
            reference_years: (reference.start, reference.end),
            forecast_years: (forecast.start, forecast.end),
            periods,
            level: cli.ci_level.or(run.ci_level).unwrap_or(defaults.level),
            ci_method: cli.ci_method.or(run.ci_method).unwrap_or(defaults.ci_method),
            bootstrap_replicates: run.bootstrap_replicates.unwrap_or(defaults.bootstrap_replicates),
            seed: cli.seed.or(run.seed).unwrap_or(defaults.seed),
            fit,
            baseline_uncertainty: run.baseline_uncertainty.unwrap_or(defaults.baseline_uncertainty),
        };
        estimation.validate()?;
        let strata = StratumKey::parse_list(cli.strata.as_deref().or(run.strata.as_deref()).unwrap_or("all"))?;
        Ok(RunConfig {
            estimation,
            strata,
            population: cli.population.clone().or_else(|| run.population.clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ConfigFile::parse("").unwrap();
        assert_eq!(cfg.ingest, IngestSchema::default());
        let run = RunConfig::resolve(&cfg, &Overrides::default()).unwrap();
        assert_eq!(run.estimation, EstimationConfig::default());
        assert_eq!(run.strata.len(), 30);
    }

    #[test]
    fn file_and_overrides() {
        let text = r#"
            [ingest]
            delimiter = ";"
            encoding = "latin1"
            non_illness_prefixes = ["V0", "X"]
            [ingest.columns]
            cause = "causa_def"

            [run]
            reference_years = "2000:2015"
            forecast_years = "2016:2017"
            strata = "both/all"
            ci_method = "bootstrap"
            sigma = "residual_dof"

            [simulate]
            seed = 9
            reference_years = [2000, 2015]
            [[simulate.shocks]]
            year = 2016
            mass = 100.0
            first_week = 1
            last_week = 4
        "#;
        let cfg = ConfigFile::parse(text).unwrap();
        assert_eq!(cfg.ingest.delimiter, ';');
        assert_eq!(cfg.ingest.columns.cause, "causa_def");
        assert_eq!(cfg.ingest.columns.year, "occ_year");
        assert_eq!(cfg.simulate.seed, 9);
        assert_eq!(cfg.simulate.shocks.len(), 1);

        let run = RunConfig::resolve(&cfg, &Overrides::default()).unwrap();
        assert_eq!(run.estimation.reference_years, (2000, 2015));
        assert_eq!(run.estimation.periods.len(), 3);
        assert_eq!(run.estimation.ci_method, CiMethod::Bootstrap);
        assert_eq!(run.estimation.fit.sigma, SigmaConvention::ResidualDof);
        assert_eq!(run.strata, vec![StratumKey::TOTAL]);

        let cli = Overrides {
            ci_level: Some(0.9),
            strata: Some("male/all,female/all".into()),
            ..Overrides::default()
        };
        let run = RunConfig::resolve(&cfg, &cli).unwrap();
        assert_eq!(run.estimation.level, 0.9);
        assert_eq!(run.strata.len(), 2);
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let cfg = ConfigFile::parse("[run]\nreference_years = \"2000:2020\"\nforecast_years = \"2020:2022\"\n").unwrap();
        assert!(matches!(
            RunConfig::resolve(&cfg, &Overrides::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_run_key_rejected() {
        assert!(ConfigFile::parse("[run]\nci_levle = 0.9\n").is_err());
    }
}

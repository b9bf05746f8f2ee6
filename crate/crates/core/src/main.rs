use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use exmort::aggregate::{build_series, write_long, SeriesMap, SexGroup, StratumKey};
use exmort::config::{ConfigFile, Overrides, RunConfig};
use exmort::excess::{weekly_excess_curve, CiMethod, ExcessEstimate, Period, PopulationTable};
use exmort::forecast::Parameter;
use exmort::ingest::{canonicalize, ingest_files, non_illness_share_by_year, read_canonical_file, write_canonical, write_rejects, CanonicalRecord};
use exmort::pipeline::{fit_years, model_stratum, run_grid, StratumFailure, StratumModel};
use exmort::report::{self, Manifest, OutputDir};
use exmort::synth::{generate_registry, synthetic_population};
use exmort::{Error, Result};

#[derive(Parser)]
#[command(name = "exmort", version, about = "Illness-related excess mortality from weekly death registries")]
struct Cli {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw registry files into the canonical record file.
    Ingest {
        #[command(flatten)]
        io: Io,
        /// Comma-separated cause-code prefixes counted as non-illness.
        #[arg(long, value_delimiter = ',')]
        non_illness_prefixes: Option<Vec<String>>,
    },
    /// Fit the quartic baseline to every reference year and stratum.
    Fit {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        plots: bool,
    },
    /// Trend the yearly parameters and forecast the epidemic years.
    Forecast {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        plots: bool,
    },
    /// Full pipeline: excess deaths, percentages, rates and intervals.
    Excess {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        plots: bool,
    },
    /// Paper-style tables and figures from an estimates.json document.
    Report {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        plots: bool,
    },
    /// Write a synthetic registry with known ground truth.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Population of the first simulated year, for the rate table.
        #[arg(long, default_value_t = 1.0e8)]
        population_base: f64,
        #[arg(long, default_value_t = 0.0103)]
        population_growth: f64,
    },
}

#[derive(Args)]
struct Io {
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "A:B")]
    reference_years: Option<Period>,
    #[arg(long, value_name = "A:B")]
    forecast_years: Option<Period>,
    /// `all` or a comma-separated list of sex/age, e.g. `male/60-69,both/all`.
    #[arg(long)]
    strata: Option<String>,
    #[arg(long)]
    ci_level: Option<f64>,
    #[arg(long, value_name = "normal|bootstrap")]
    ci_method: Option<CiMethod>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV with year,sex,age_group,population.
    #[arg(long)]
    population: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            reference_years: self.reference_years,
            forecast_years: self.forecast_years,
            strata: self.strata.clone(),
            ci_level: self.ci_level,
            ci_method: self.ci_method,
            population: self.population.clone(),
            seed: self.seed,
        }
    }
}

/// Contents of `estimates.json`.
#[derive(Debug, Serialize, Deserialize)]
struct EstimatesDocument {
    config: RunConfig,
    estimates: Vec<ExcessEstimate>,
    failures: Vec<StratumFailure>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Ingest { io, non_illness_prefixes } => cmd_ingest(file, io, non_illness_prefixes),
        Command::Fit { io, run, plots } => cmd_fit(&file, io, run, plots),
        Command::Forecast { io, run, plots } => cmd_forecast(&file, io, run, plots),
        Command::Excess { io, run, plots } => cmd_excess(&file, io, run, plots),
        Command::Report { io, plots } => cmd_report(io, plots),
        Command::Simulate {
            out,
            seed,
            population_base,
            population_growth,
        } => cmd_simulate(file, out, seed, population_base, population_growth),
    }
}

fn cmd_ingest(mut file: ConfigFile, io: Io, prefixes: Option<Vec<String>>) -> Result<()> {
    if let Some(p) = prefixes {
        file.ingest.non_illness_prefixes = p;
    }
    let schema = file.ingest;
    let outcome = ingest_files(&io.input, &schema)?;
    let canonical = canonicalize(&outcome.records, &schema.non_illness_prefixes);
    let mut out = OutputDir::create(&io.out)?;
    out.write_with("canonical.csv", |w| write_canonical(&canonical, w))?;
    out.write_with("rejects.csv", |w| write_rejects(&outcome.rejects, w))?;
    let share = non_illness_share_by_year(&canonical);
    out.write_with("non_illness_share.csv", |w| report::write_non_illness_share(&share, w))?;
    Manifest::build("ingest", &schema, &io.input, &out)?.write(&mut out)?;
    println!(
        "ingest: {} rows, {} accepted, {} rejected",
        outcome.rows_read,
        outcome.accepted(),
        outcome.rejected()
    );
    Ok(())
}

struct Loaded {
    run: RunConfig,
    series: SeriesMap,
    population: Option<PopulationTable>,
}

fn load(file: &ConfigFile, io: &Io, args: &RunArgs) -> Result<Loaded> {
    let run = RunConfig::resolve(file, &args.overrides())?;
    let mut records: Vec<CanonicalRecord> = Vec::new();
    for p in &io.input {
        records.extend(read_canonical_file(p)?);
    }
    let series = build_series(&records, run.estimation.all_years(), &run.strata)?;
    let population = match &run.population {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            Some(PopulationTable::read_csv(std::io::BufReader::new(f))?)
        }
        None => None,
    };
    Ok(Loaded {
        run,
        series,
        population,
    })
}

fn inputs(io: &Io, run: &RunConfig) -> Vec<PathBuf> {
    io.input.iter().cloned().chain(run.population.clone()).collect()
}

fn cmd_fit(file: &ConfigFile, io: Io, args: RunArgs, plots: bool) -> Result<()> {
    let Loaded { run, series, .. } = load(file, &io, &args)?;
    let cfg = &run.estimation;
    let per_stratum: Vec<_> = run
        .strata
        .par_iter()
        .map(|&s| fit_years(&series, s, cfg.reference(), &cfg.fit))
        .collect();
    let fits: Vec<_> = per_stratum.iter().flat_map(|p| p.0.iter().cloned()).collect();
    let flags: Vec<_> = per_stratum.iter().flat_map(|p| p.1.iter().cloned()).collect();

    let mut out = OutputDir::create(&io.out)?;
    out.write_with("diagnostics.csv", |w| report::write_diagnostics(&fits, &flags, w))?;
    let reference: SeriesMap = series
        .iter()
        .filter(|((y, _), _)| cfg.reference().contains(y))
        .map(|(k, v)| (*k, v.clone()))
        .collect();
    out.write_with("series.csv", |w| write_long(&reference, w))?;
    if plots {
        for f in &fits {
            let s = &series[&(f.year, f.stratum)];
            let name = format!("figures/fits/{}_{}", report::stratum_slug(f.stratum), f.year);
            out.write_chart(&name, &report::fit_chart(s, f, cfg.fit.band_level)?)?;
        }
        for (&s, (fs, _)) in run.strata.iter().zip(&per_stratum) {
            let slug = report::stratum_slug(s);
            out.write_chart(
                &format!("figures/reference_{slug}"),
                &report::reference_curves_chart(&series, s, cfg.reference()),
            )?;
            out.write_chart(&format!("figures/goodness_{slug}"), &report::goodness_chart(fs))?;
        }
    }
    Manifest::build("fit", &run, &inputs(&io, &run), &out)?.write(&mut out)?;
    println!("fit: {} fits, {} flagged cells", fits.len(), flags.len());
    Ok(())
}

fn models(run: &RunConfig, series: &SeriesMap) -> (Vec<StratumModel>, Vec<StratumFailure>) {
    let results: Vec<_> = run
        .strata
        .par_iter()
        .map(|&s| model_stratum(series, s, &run.estimation))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (s, r) in run.strata.iter().zip(results) {
        match r {
            Ok(m) => ok.push(m),
            Err(e) => {
                log::warn!("{s}: {e}");
                failed.push(StratumFailure {
                    stratum: *s,
                    reason: e.to_string(),
                })
            }
        }
    }
    (ok, failed)
}

fn write_model_outputs(out: &mut OutputDir, models: &[StratumModel], plots: bool) -> Result<()> {
    out.write_with("trends.csv", |w| report::write_trends(models.iter().map(|m| &m.trends), w))?;
    out.write_with("forecast.csv", |w| report::write_forecasts(models, w))?;
    if plots {
        for m in models {
            let slug = report::stratum_slug(m.stratum);
            for p in Parameter::ALL {
                out.write_chart(&format!("figures/parameters/{slug}_{p}"), &report::parameter_chart(m, p))?;
            }
        }
    }
    Ok(())
}

fn cmd_forecast(file: &ConfigFile, io: Io, args: RunArgs, plots: bool) -> Result<()> {
    let Loaded { run, series, .. } = load(file, &io, &args)?;
    let (models, failures) = models(&run, &series);
    let mut out = OutputDir::create(&io.out)?;
    write_model_outputs(&mut out, &models, plots)?;
    out.write_text("failures.json", &(serde_json::to_string_pretty(&failures)? + "\n"))?;
    Manifest::build("forecast", &run, &inputs(&io, &run), &out)?.write(&mut out)?;
    println!("forecast: {} strata modeled, {} failed", models.len(), failures.len());
    Ok(())
}

fn cmd_excess(file: &ConfigFile, io: Io, args: RunArgs, plots: bool) -> Result<()> {
    let Loaded { run, series, population } = load(file, &io, &args)?;
    let grid = run_grid(&series, &run.strata, &run.estimation, population.as_ref())?;
    let mut out = OutputDir::create(&io.out)?;

    let fits: Vec<_> = grid.models.iter().flat_map(|m| m.fits.iter().cloned()).collect();
    out.write_with("diagnostics.csv", |w| report::write_diagnostics(&fits, &[], w))?;
    write_model_outputs(&mut out, &grid.models, plots)?;
    out.write_with("weekly_excess.csv", |w| report::write_weekly_excess(&grid.models, &series, w))?;

    let doc = EstimatesDocument {
        config: run.clone(),
        estimates: grid.estimates.clone(),
        failures: grid.failures.clone(),
    };
    out.write_text("estimates.json", &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    write_estimate_tables(&mut out, &doc, plots)?;

    if plots {
        for m in &grid.models {
            let slug = report::stratum_slug(m.stratum);
            for fc in &m.forecasts {
                let s = &series[&(fc.year, m.stratum)];
                let points = weekly_excess_curve(s, fc)?;
                out.write_chart(
                    &format!("figures/excess/{slug}_{}", fc.year),
                    &report::excess_chart(s, &points),
                )?;
            }
        }
        for male in grid.models.iter().filter(|m| m.stratum.sex == SexGroup::Male) {
            let key = StratumKey {
                sex: SexGroup::Female,
                age_group: male.stratum.age_group,
            };
            if let Some(female) = grid.model(key) {
                out.write_chart(
                    &format!("figures/sex_pct_{}", male.stratum.age_group.label().replace('+', "plus")),
                    &report::sex_pct_chart(male, female, &series)?,
                )?;
            }
        }
    }
    Manifest::build("excess", &run, &inputs(&io, &run), &out)?.write(&mut out)?;
    println!(
        "excess: {} estimates, {} strata failed",
        doc.estimates.len(),
        doc.failures.len()
    );
    Ok(())
}

fn write_estimate_tables(out: &mut OutputDir, doc: &EstimatesDocument, plots: bool) -> Result<()> {
    let est = &doc.estimates;
    let periods = &doc.config.estimation.periods;
    out.write_with("estimates.csv", |w| report::write_estimates(est, w))?;
    out.write_with("sex_ratio.csv", |w| report::write_sex_ratios(est, periods, w))?;
    for &period in periods {
        for sex in SexGroup::ALL {
            if report::period_rows(est, period, sex).is_empty() {
                continue;
            }
            let name = format!("tables/{period}_{sex}");
            out.write_with(&format!("{name}.csv"), |w| report::write_period_table(est, period, sex, w))?;
            out.write_text(&format!("{name}.md"), &report::period_table_markdown(est, period, sex))?;
            if plots {
                for (percent, kind) in [(false, "abs"), (true, "pct")] {
                    out.write_chart(
                        &format!("figures/age/{period}_{sex}_{kind}"),
                        &report::age_profile_chart(est, period, sex, percent),
                    )?;
                }
            }
        }
    }
    Ok(())
}

fn cmd_report(io: Io, plots: bool) -> Result<()> {
    let [path] = io.input.as_slice() else {
        return Err(Error::Usage("report takes exactly one estimates.json".into()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: EstimatesDocument = serde_json::from_str(&text)?;
    let mut out = OutputDir::create(&io.out)?;
    write_estimate_tables(&mut out, &doc, plots)?;
    Manifest::build("report", &doc.config, &io.input, &out)?.write(&mut out)?;
    println!("report: {} estimates", doc.estimates.len());
    Ok(())
}

fn cmd_simulate(file: ConfigFile, out_dir: PathBuf, seed: Option<u64>, base: f64, growth: f64) -> Result<()> {
    let mut cfg = file.simulate;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut out = OutputDir::create(&out_dir)?;
    let mut truth = None;
    out.write_with("registry.csv", |w| {
        truth = Some(generate_registry(&cfg, w)?);
        Ok(())
    })?;
    let truth = truth.expect("registry written");
    let pop = synthetic_population(&cfg, base, growth)?;
    out.write_with("population.csv", |w| pop.write_csv(w))?;
    out.write_text("truth.json", &(serde_json::to_string_pretty(&truth)? + "\n"))?;
    Manifest::build("simulate", &cfg, &[] as &[PathBuf], &out)?.write(&mut out)?;
    println!("simulate: {} records written to {}", truth.total_records(), display(&out_dir));
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

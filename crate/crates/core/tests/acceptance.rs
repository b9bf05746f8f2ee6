//! One PASS/FAIL line per acceptance criterion. Runtime limits are checked
//! against wall-clock time of an optimized test build.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use exmort::aggregate::{build_series, AgeGroup, SeriesMap, SexGroup, StratumKey};
use exmort::calendar::{days_in_year, week_of, week_of_day};
use exmort::config::{ConfigFile, Overrides, RunConfig};
use exmort::excess::{sex_ratio, Period, PopulationTable};
use exmort::forecast::{alpha_growth_rate, bias_factor, Parameter};
use exmort::ingest::{canonicalize, parse_registry, read_canonical_file, IngestSchema};
use exmort::pipeline::{estimate_period, fit_years, model_stratum, run_grid, EstimationConfig};
use exmort::polyfit::{anderson_darling, ols_fit, FitOptions};
use exmort::synth::{generate_registry, simulate_counts, synthetic_population, Shock, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> String {
    format!("{:.2}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs())
}

fn ols_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cases: Vec<_> = (0..100).map(|_| integer_polynomial(&mut rng)).collect();
    let mut worst_rel = 0.0f64;
    let mut worst_zero = 0.0f64;
    let mut worst_r2 = 0.0f64;
    let fit_start = Instant::now();
    for (counts, raw, _) in &cases {
        let want: [f64; 5] = std::array::from_fn(|k| to_f64(&raw[k]));
        let max = counts.iter().copied().max().unwrap() as f64;
        let fit = ols_fit(&series(2001, counts.clone()), &FitOptions::default()).map_err(|e| e.to_string())?;
        for k in 0..5 {
            if want[k] != 0.0 {
                worst_rel = worst_rel.max((fit.coefficients[k] - want[k]).abs() / want[k].abs());
            }
        }
        // a zero coefficient has no relative error; bound its contribution
        worst_zero = worst_zero.max(contribution_error(&fit.coefficients, &want, max));
        worst_r2 = worst_r2.max((fit.adj_r2.unwrap_or(f64::NAN) - 1.0).abs());
    }
    let fit_time = fit_start.elapsed();
    check(
        worst_rel <= 1e-6 && worst_zero <= 1e-6 && worst_r2 <= 1e-9 && fit_time < Duration::from_secs(1),
        format!(
            "max rel coef err {worst_rel:.2e}, max zero-coef contribution {worst_zero:.2e}, max |adjR2-1| {worst_r2:.2e}, {}",
            within(fit_time, Duration::from_secs(1))
        ),
    )
}

fn ols_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let counts = noisy_quartic(&mut rng);
        let exact = exact_ols(&counts);
        let fit = ols_fit(&series(2002, counts), &FitOptions::default()).map_err(|e| e.to_string())?;
        for k in 0..5 {
            let want = to_f64(&exact[k]);
            worst = worst.max((fit.coefficients[k] - want).abs() / want.abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-8 && elapsed < Duration::from_secs(5),
        format!("max rel coef err {worst:.2e}, {}", within(elapsed, Duration::from_secs(5))),
    )
}

fn week_calendar() -> Outcome {
    let mut mismatches = 0;
    let mut checked = 0;
    for year in [2019, 2020] {
        for d in 1..=days_in_year(year) {
            let want = d.div_ceil(7).min(53) as u8;
            let date = chrono::NaiveDate::from_yo_opt(year, d).unwrap();
            checked += 2;
            mismatches += usize::from(week_of_day(d).get() != want);
            mismatches += usize::from(week_of(date).get() != want);
        }
    }
    check(mismatches == 0, format!("{checked} lookups over 365 and 366 days, {mismatches} mismatches"))
}

fn anderson_darling_calibration() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let reps = 10_000;
    let mut rejected = 0;
    for _ in 0..reps {
        let x: Vec<f64> = (0..52).map(|_| StandardNormal.sample(&mut rng)).collect();
        rejected += usize::from(anderson_darling(&x).map_err(|e| e.to_string())?.p_value < 0.05);
    }
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut detected = 0;
    for _ in 0..reps {
        let x: Vec<f64> = (0..52)
            .map(|_| if rng.random_bool(0.5) { 10.0 } else { -10.0 } + noise.sample(&mut rng))
            .collect();
        detected += usize::from(anderson_darling(&x).map_err(|e| e.to_string())?.p_value < 0.05);
    }
    let elapsed = start.elapsed();
    let size = rejected as f64 / reps as f64;
    let power = detected as f64 / reps as f64;
    check(
        (0.035..=0.065).contains(&size) && power >= 0.99 && elapsed < Duration::from_secs(60),
        format!(
            "normal rejection {size:.4}, bimodal power {power:.4}, {}",
            within(elapsed, Duration::from_secs(60))
        ),
    )
}

/// Default generator at a twentieth of its size, expanded to registry
/// rows and ingested back.
fn registry_series(mut cfg: SynthConfig, strata: &[StratumKey]) -> Result<SeriesMap, String> {
    for t in &mut cfg.trends[..5] {
        t.intercept *= 0.05;
        t.slope *= 0.05;
    }
    cfg.trends[5].intercept = 9.0;
    cfg.trends[5].slope = 0.1;
    let mut csv = Vec::new();
    generate_registry(&cfg, &mut csv).map_err(|e| e.to_string())?;
    let schema = IngestSchema::default();
    let outcome = parse_registry(csv.as_slice(), &schema, "synthetic").map_err(|e| e.to_string())?;
    if outcome.rejected() != 0 {
        return Err(format!("{} synthetic rows rejected", outcome.rejected()));
    }
    let canonical = canonicalize(&outcome.records, &schema.non_illness_prefixes);
    build_series(&canonical, cfg.years(), strata).map_err(|e| e.to_string())
}

fn bias_factor_on_registry() -> Outcome {
    let cfg = SynthConfig::default();
    let years = cfg.reference_years.0..=cfg.reference_years.1;
    let n_years = years.clone().count();
    let series = registry_series(cfg, &[StratumKey::TOTAL])?;
    let (fits, flags) = fit_years(&series, StratumKey::TOTAL, years, &FitOptions::default());
    if !flags.is_empty() {
        return Err(format!("fit flags: {flags:?}"));
    }
    let pairs: Vec<_> = fits.iter().map(|f| (&series[&(f.year, StratumKey::TOTAL)], f)).collect();
    let b = bias_factor(&pairs).map_err(|e| e.to_string())?;
    check(
        n_years == 22 && (0.97..=1.03).contains(&b.value),
        format!("b = {:.4} over {n_years} reference years", b.value),
    )
}

fn total_series(cfg: &SynthConfig) -> Result<SeriesMap, String> {
    Ok(simulate_counts(cfg)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|c| ((c.year, StratumKey::TOTAL), c.series()))
        .collect())
}

struct McSummary {
    mean_psi: f64,
    covered: Vec<usize>,
    reps: usize,
}

/// Simulate-then-estimate replicates of the all-strata series; `covered[i]`
/// counts intervals of `periods[i]` containing `truth[i]`.
fn monte_carlo(shock: Option<Shock>, periods: &[Period], truth: &[f64], reps: usize) -> Result<McSummary, String> {
    let est = EstimationConfig::default();
    let mut covered = vec![0; periods.len()];
    let mut psi_sum = 0.0;
    for r in 0..reps {
        let mut syn = SynthConfig {
            seed: 10_000 + r as u64,
            ..SynthConfig::default()
        };
        syn.shocks.extend(shock);
        let series = total_series(&syn)?;
        let model = model_stratum(&series, StratumKey::TOTAL, &est).map_err(|e| e.to_string())?;
        for (i, (&p, &t)) in periods.iter().zip(truth).enumerate() {
            let e = estimate_period(&model, p, &est, None).map_err(|e| e.to_string())?;
            covered[i] += usize::from(e.psi_ci.0 <= t && t <= e.psi_ci.1);
            if i == 0 {
                psi_sum += e.psi;
            }
        }
    }
    Ok(McSummary {
        mean_psi: psi_sum / reps as f64,
        covered,
        reps,
    })
}

fn end_to_end_recovery() -> Outcome {
    let start = Instant::now();
    let shock = Shock {
        year: 2020,
        mass: 5000.0,
        first_week: 14,
        last_week: 40,
    };
    let mc = monte_carlo(Some(shock), &[Period::year(2020)], &[5000.0], 500)?;
    let elapsed = start.elapsed();
    let coverage = mc.covered[0] as f64 / mc.reps as f64;
    let bias = (mc.mean_psi - 5000.0) / 5000.0;
    check(
        bias.abs() <= 0.02 && (0.93..=0.97).contains(&coverage) && elapsed < Duration::from_secs(600),
        format!(
            "mean psi {:.1} ({:+.2}%), coverage {coverage:.3} over {} replicates, {}",
            mc.mean_psi,
            100.0 * bias,
            mc.reps,
            within(elapsed, Duration::from_secs(600))
        ),
    )
}

fn null_coverage() -> Outcome {
    let periods = Period::standard_set(2020, 2022);
    let zeros = vec![0.0; periods.len()];
    let mc = monte_carlo(None, &periods, &zeros, 500)?;
    let shares: Vec<f64> = mc.covered.iter().map(|&c| c as f64 / mc.reps as f64).collect();
    let detail = periods
        .iter()
        .zip(&shares)
        .map(|(p, s)| format!("{p} {s:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        shares.iter().all(|s| (0.93..=0.97).contains(s)),
        format!("coverage of 0 over {} replicates: {detail}", mc.reps),
    )
}

fn grid_completeness() -> Outcome {
    let strata = StratumKey::full_grid();
    let cfg = SynthConfig::default();
    let pop = synthetic_population(&cfg, 1e8, 0.0103).map_err(|e| e.to_string())?;
    let series = registry_series(cfg, &strata)?;
    let run = run_grid(&series, &strata, &EstimationConfig::default(), Some(&pop)).map_err(|e| e.to_string())?;
    check(
        run.estimates.len() == 150 && run.failures.is_empty(),
        format!(
            "{} estimates from {} strata, {} failed strata",
            run.estimates.len(),
            strata.len(),
            run.failures.len()
        ),
    )
}

fn additivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let est = EstimationConfig::default();
    let whole = Period::new(2020, 2022).unwrap();
    let mut cases = 0;
    let mut mismatches = 0;
    for case in 0..200 {
        let series: SeriesMap = if case % 2 == 0 {
            // arbitrary weekly counts with no seasonal structure at all
            let level = rng.random_range(1..5000u64);
            (1998..=2022)
                .map(|y| {
                    let counts = (0..52).map(|_| rng.random_range(0..=level)).collect();
                    let s = exmort::AnnualWeeklySeries::from_counts(y, StratumKey::TOTAL, counts, rng.random_range(0..=level / 3))
                        .unwrap();
                    ((y, StratumKey::TOTAL), s)
                })
                .collect()
        } else {
            let mut syn = SynthConfig {
                seed: rng.random(),
                ..SynthConfig::default()
            };
            for year in 2020..=2022 {
                if rng.random_bool(0.5) {
                    let first = rng.random_range(1..=52u8);
                    syn.shocks.push(Shock {
                        year,
                        mass: rng.random_range(0.0..50_000.0),
                        first_week: first,
                        last_week: rng.random_range(first..=52),
                    });
                }
            }
            total_series(&syn)?
        };
        let model = model_stratum(&series, StratumKey::TOTAL, &est).map_err(|e| e.to_string())?;
        let total = estimate_period(&model, whole, &est, None).map_err(|e| e.to_string())?;
        let sum = (2020..=2022)
            .map(|y| estimate_period(&model, Period::year(y), &est, None).map(|e| e.psi))
            .sum::<Result<f64, _>>()
            .map_err(|e| e.to_string())?;
        cases += 1;
        mismatches += usize::from(total.psi != sum);
    }
    check(mismatches == 0, format!("{cases} inputs, {mismatches} with period psi != sum of yearly psi"))
}

fn real_data() -> Option<Outcome> {
    let canonical = PathBuf::from(std::env::var_os("EXMORT_CANONICAL")?);
    let population = PathBuf::from(std::env::var_os("EXMORT_POPULATION")?);
    Some((|| {
        let err = |e: exmort::Error| e.to_string();
        let run = RunConfig::resolve(&ConfigFile::default(), &Overrides::default()).map_err(err)?;
        let records = read_canonical_file(&canonical).map_err(err)?;
        let pop = PopulationTable::read_csv(std::fs::File::open(&population).map_err(|e| e.to_string())?).map_err(err)?;
        let series = build_series(&records, run.estimation.all_years(), &run.strata).map_err(err)?;
        let grid = run_grid(&series, &run.strata, &run.estimation, Some(&pop)).map_err(err)?;
        let get = |p: Period, s: StratumKey| grid.estimate(p, s).ok_or_else(|| format!("no estimate for {p} {s}"));
        let all3 = get(Period::new(2020, 2022).unwrap(), StratumKey::TOTAL)?;
        let all2 = get(Period::new(2020, 2021).unwrap(), StratumKey::TOTAL)?;
        let y2020 = get(Period::year(2020), StratumKey::TOTAL)?;
        let by_sex = |sex| StratumKey::new(sex, AgeGroup::All);
        let ratio = sex_ratio(
            get(Period::new(2020, 2022).unwrap(), by_sex(SexGroup::Male))?,
            get(Period::new(2020, 2022).unwrap(), by_sex(SexGroup::Female))?,
        )
        .map_err(err)?;
        let model = grid.model(StratumKey::TOTAL).ok_or("no all-strata model")?;
        let growth = alpha_growth_rate(model.trends.get(Parameter::Alpha), 2019).map_err(err)?;
        let rate = y2020.rate_per_100k.unwrap_or(f64::NAN);
        let rel = |got: f64, want: f64| (got - want).abs() / want;
        let ok = rel(all3.psi, 787_753.0) <= 0.02
            && (all3.delta_psi_pct - 39.3).abs() <= 1.0
            && rel(all2.psi, 719_649.0) <= 0.02
            && rel(rate, 281.0) <= 0.05
            && (growth - 1.82).abs() <= 0.1
            && (ratio - 1.7).abs() <= 0.1;
        check(
            ok,
            format!(
                "psi 2020-2022 {:.0} ({:.1}%), psi 2020-2021 {:.0}, rate 2020 {rate:.1}, alpha growth 2019 {growth:.2}%, male/female {ratio:.2}",
                all3.psi, all3.delta_psi_pct, all2.psi
            ),
        )
    })())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("ols exactness", ols_exactness),
        ("ols oracle equivalence", ols_oracle_equivalence),
        ("week calendar", week_calendar),
        ("anderson-darling calibration", anderson_darling_calibration),
        ("bias factor", bias_factor_on_registry),
        ("end-to-end recovery", end_to_end_recovery),
        ("null coverage", null_coverage),
        ("grid completeness", grid_completeness),
        ("additivity", additivity),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    match real_data() {
        None => println!("SKIPPED real registry reproduction: set EXMORT_CANONICAL and EXMORT_POPULATION"),
        Some(Ok(detail)) => println!("PASS real registry reproduction: {detail}"),
        Some(Err(detail)) => {
            println!("FAIL real registry reproduction: {detail}");
            failed.push("real registry reproduction");
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}

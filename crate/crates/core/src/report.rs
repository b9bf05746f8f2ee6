//! Output tables, figures and the run manifest.
//!
//! Machine-readable files carry full `f64` precision (shortest
//! round-trip form), so a reader recovers the exact numbers the pipeline
//! produced. The per-period Markdown tables are rounded for reading.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{AgeGroup, AnnualWeeklySeries, SeriesMap, SexGroup, StratumKey};
use crate::error::{Error, Result};
use crate::excess::{sex_ratio, weekly_excess_curve, ExcessEstimate, Period, WeeklyExcessPoint};
use crate::forecast::{alpha_growth_rate, Parameter, ParamTrends};
use crate::pipeline::{FitFlag, StratumModel};
use crate::polyfit::{confidence_band, PolyFit};
use crate::svg::{Chart, PALETTE};

/// Output directory that remembers every file written through it, in
/// order, for the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(OutputDir {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Creates `rel` (and its parent directories) and hands a buffered
    /// writer to `f`.
    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.written.push(rel.to_string());
        Ok(path)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<PathBuf> {
        self.write_with(rel, |w| w.write_all(text.as_bytes()).map_err(Error::Write))
    }

    /// Writes `<rel>.svg` and the plotted data as `<rel>.csv`.
    pub fn write_chart(&mut self, rel: &str, chart: &Chart) -> Result<()> {
        self.write_text(&format!("{rel}.svg"), &chart.render())?;
        self.write_with(&format!("{rel}.csv"), |w| chart.write_data(w))?;
        Ok(())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Write(e.into_error()))?
        .flush()
        .map_err(Error::Write)
}

// ---- tables ---------------------------------------------------------------

/// One row per fitted (year, stratum); flags without a fit get a row with
/// empty numeric fields.
pub fn write_diagnostics<W: Write>(fits: &[PolyFit], flags: &[FitFlag], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "year", "sex", "age_group", "alpha", "beta1", "beta2", "beta3", "beta4", "sigma", "adj_r2", "ad_stat",
        "ad_pvalue", "band_lo_offset", "band_hi_offset", "flag",
    ])?;
    let mut by_cell: BTreeMap<(i32, StratumKey), Vec<&str>> = BTreeMap::new();
    for f in flags {
        by_cell.entry((f.year, f.stratum)).or_default().push(&f.reason);
    }
    let mut rows: Vec<(i32, StratumKey, Option<&PolyFit>)> = fits.iter().map(|f| (f.year, f.stratum, Some(f))).collect();
    for &(year, stratum) in by_cell.keys() {
        if !fits.iter().any(|f| f.year == year && f.stratum == stratum) {
            rows.push((year, stratum, None));
        }
    }
    rows.sort_by_key(|r| (r.1, r.0));
    for (year, stratum, fit) in rows {
        let flag = by_cell.get(&(year, stratum)).map(|v| v.join("; ")).unwrap_or_default();
        let mut rec = vec![year.to_string(), stratum.sex.to_string(), stratum.age_group.to_string()];
        match fit {
            Some(f) => {
                rec.extend(f.coefficients.iter().map(|c| format!("{c:e}")));
                rec.push(num(f.sigma));
                rec.push(opt(f.adj_r2));
                rec.push(opt(f.ad_stat));
                rec.push(opt(f.ad_pvalue));
                rec.push(num(f.band_lo_offset));
                rec.push(num(f.band_hi_offset));
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 11)),
        }
        rec.push(flag);
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn write_trends<'a, W: Write>(trends: impl IntoIterator<Item = &'a ParamTrends>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sex", "age_group", "parameter", "slope", "intercept", "first_year", "last_year", "residual_sd"])?;
    for t in trends {
        for p in &t.trends {
            w.write_record([
                t.stratum.sex.to_string(),
                t.stratum.age_group.to_string(),
                p.parameter.to_string(),
                num(p.slope),
                num(p.intercept),
                p.reference_years.0.to_string(),
                p.reference_years.1.to_string(),
                num(p.residual_sd),
            ])?;
        }
    }
    finish(w)
}

/// Trend-extrapolated parameters and expected totals per forecast year.
pub fn write_forecasts<'a, W: Write>(models: impl IntoIterator<Item = &'a StratumModel>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "year",
        "sex",
        "age_group",
        "alpha",
        "beta1",
        "beta2",
        "beta3",
        "beta4",
        "sigma",
        "bias_factor",
        "alpha_growth_pct",
        "expected_week53",
        "expected_total",
        "observed_total",
        "psi",
        "warnings",
    ])?;
    for m in models {
        let alpha = m.trends.get(Parameter::Alpha);
        for (fc, y) in m.forecasts.iter().zip(&m.yearly) {
            let mut rec = vec![fc.year.to_string(), m.stratum.sex.to_string(), m.stratum.age_group.to_string()];
            rec.extend(fc.coefficients.iter().map(|c| format!("{c:e}")));
            rec.push(num(fc.sigma_forecast));
            rec.push(num(fc.bias_factor));
            rec.push(alpha_growth_rate(alpha, fc.year).map(num).unwrap_or_default());
            rec.push(num(fc.expected_week53));
            rec.push(num(y.expected_total));
            rec.push(y.observed_total.to_string());
            rec.push(num(y.psi));
            rec.push(fc.warnings.join("; "));
            w.write_record(&rec)?;
        }
    }
    finish(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub period: Period,
    pub sex: SexGroup,
    pub age_group: AgeGroup,
    pub psi: f64,
    pub psi_lo: f64,
    pub psi_hi: f64,
    pub delta_psi_pct: f64,
    pub delta_psi_lo: f64,
    pub delta_psi_hi: f64,
    pub rate_per_100k: Option<f64>,
    pub rate_lo: Option<f64>,
    pub rate_hi: Option<f64>,
    pub expected_total: f64,
    pub observed_total: u64,
    pub level: f64,
    pub method: String,
}

impl From<&ExcessEstimate> for EstimateRow {
    fn from(e: &ExcessEstimate) -> Self {
        EstimateRow {
            period: e.period,
            sex: e.stratum.sex,
            age_group: e.stratum.age_group,
            psi: e.psi,
            psi_lo: e.psi_ci.0,
            psi_hi: e.psi_ci.1,
            delta_psi_pct: e.delta_psi_pct,
            delta_psi_lo: e.delta_psi_ci.0,
            delta_psi_hi: e.delta_psi_ci.1,
            rate_per_100k: e.rate_per_100k,
            rate_lo: e.rate_ci.map(|c| c.0),
            rate_hi: e.rate_ci.map(|c| c.1),
            expected_total: e.expected_total,
            observed_total: e.observed_total,
            level: e.level,
            method: serde_json::to_value(e.method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        }
    }
}

/// Long format, one row per (period, stratum).
pub fn write_estimates<W: Write>(estimates: &[ExcessEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in estimates {
        w.serialize(EstimateRow::from(e))?;
    }
    if estimates.is_empty() {
        // header only
        w.write_record([
            "period", "sex", "age_group", "psi", "psi_lo", "psi_hi", "delta_psi_pct", "delta_psi_lo", "delta_psi_hi",
            "rate_per_100k", "rate_lo", "rate_hi", "expected_total", "observed_total", "level", "method",
        ])?;
    }
    finish(w)
}

pub fn read_estimates<R: Read>(input: R) -> Result<Vec<EstimateRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Age rows of one (period, sex) table, in grid order; missing cells are
/// skipped.
pub fn period_rows(estimates: &[ExcessEstimate], period: Period, sex: SexGroup) -> Vec<&ExcessEstimate> {
    AgeGroup::GRID
        .iter()
        .filter_map(|&age_group| {
            estimates
                .iter()
                .find(|e| e.period == period && e.stratum == StratumKey { sex, age_group })
        })
        .collect()
}

pub fn write_period_table<W: Write>(estimates: &[ExcessEstimate], period: Period, sex: SexGroup, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "age_group", "psi", "psi_lo", "psi_hi", "delta_psi_pct", "delta_psi_lo", "delta_psi_hi", "rate_per_100k", "rate_lo",
        "rate_hi",
    ])?;
    for e in period_rows(estimates, period, sex) {
        w.write_record([
            e.stratum.age_group.to_string(),
            num(e.psi),
            num(e.psi_ci.0),
            num(e.psi_ci.1),
            num(e.delta_psi_pct),
            num(e.delta_psi_ci.0),
            num(e.delta_psi_ci.1),
            opt(e.rate_per_100k),
            opt(e.rate_ci.map(|c| c.0)),
            opt(e.rate_ci.map(|c| c.1)),
        ])?;
    }
    finish(w)
}

/// Rounded Markdown rendering of one (period, sex) table.
pub fn period_table_markdown(estimates: &[ExcessEstimate], period: Period, sex: SexGroup) -> String {
    let rows = period_rows(estimates, period, sex);
    let level = rows.first().map_or(0.95, |e| e.level);
    let ci = format!("{:.0}% CI", level * 100.0);
    let mut s = String::new();
    let _ = writeln!(s, "Excess illness deaths, {period}, sex: {sex}\n");
    let _ = writeln!(
        s,
        "| Age | Excess deaths | {ci} | Excess % | {ci} | Rate per 100,000 | {ci} |\n|---|---:|---|---:|---|---:|---|"
    );
    for e in rows {
        let rate = e.rate_per_100k.map(|r| format!("{r:.1}")).unwrap_or_else(|| "n/a".into());
        let rate_ci = e
            .rate_ci
            .map(|(lo, hi)| format!("[{lo:.1}, {hi:.1}]"))
            .unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "| {} | {:.0} | [{:.0}, {:.0}] | {:.1} | [{:.1}, {:.1}] | {rate} | {rate_ci} |",
            e.stratum.age_group,
            e.psi,
            e.psi_ci.0,
            e.psi_ci.1,
            e.delta_psi_pct,
            e.delta_psi_ci.0,
            e.delta_psi_ci.1
        );
    }
    s
}

/// Male/female excess-rate ratio for every period and age group where
/// both cells exist; undefined ratios are left empty with the reason.
pub fn write_sex_ratios<W: Write>(estimates: &[ExcessEstimate], periods: &[Period], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "age_group", "male_rate", "female_rate", "ratio", "note"])?;
    for &period in periods {
        for age_group in AgeGroup::GRID {
            let find = |sex| {
                estimates
                    .iter()
                    .find(|e| e.period == period && e.stratum == StratumKey { sex, age_group })
            };
            let (Some(m), Some(f)) = (find(SexGroup::Male), find(SexGroup::Female)) else {
                continue;
            };
            let (ratio, note) = match sex_ratio(m, f) {
                Ok(r) => (num(r), String::new()),
                Err(e) => (String::new(), e.to_string()),
            };
            w.write_record([
                period.to_string(),
                age_group.to_string(),
                opt(m.rate_per_100k),
                opt(f.rate_per_100k),
                ratio,
                note,
            ])?;
        }
    }
    finish(w)
}

/// Weekly observed, expected and percentage excess for every modeled
/// stratum and forecast year.
pub fn write_weekly_excess<'a, W: Write>(
    models: impl IntoIterator<Item = &'a StratumModel>,
    series: &SeriesMap,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "sex", "age_group", "week", "observed", "expected", "pct_excess"])?;
    for m in models {
        for fc in &m.forecasts {
            let Some(s) = series.get(&(fc.year, m.stratum)) else { continue };
            for p in weekly_excess_curve(s, fc)? {
                w.write_record([
                    fc.year.to_string(),
                    m.stratum.sex.to_string(),
                    m.stratum.age_group.to_string(),
                    p.week.to_string(),
                    p.observed.to_string(),
                    num(p.expected),
                    opt(p.pct_excess),
                ])?;
            }
        }
    }
    finish(w)
}

pub fn write_non_illness_share<W: Write>(share: &BTreeMap<i32, f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["year", "non_illness_pct"])?;
    for (year, pct) in share {
        w.write_record([year.to_string(), num(*pct)])?;
    }
    finish(w)
}

// ---- figures --------------------------------------------------------------

fn weeks(n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(|w| w as f64)
}

/// Observed weekly deaths, the quartic fit and its residual-quantile band.
pub fn fit_chart(series: &AnnualWeeklySeries, fit: &PolyFit, level: f64) -> Result<Chart> {
    let band = confidence_band(fit, level)?;
    let x: Vec<f64> = weeks(fit.fitted.len()).collect();
    Ok(Chart::new(format!("{} {}", fit.year, fit.stratum), "week", "illness deaths")
        .line("observed", x.iter().copied().zip(series.counts_f64()).collect(), PALETTE[0])
        .line("fitted", x.iter().copied().zip(fit.fitted.iter().copied()).collect(), PALETTE[1])
        .band(
            format!("{:.0}% band", level * 100.0),
            x,
            band.iter().map(|b| b.0).collect(),
            band.iter().map(|b| b.1).collect(),
            PALETTE[1],
        ))
}

/// All reference years' weekly curves on one set of axes.
pub fn reference_curves_chart(series: &SeriesMap, stratum: StratumKey, years: std::ops::RangeInclusive<i32>) -> Chart {
    let mut chart = Chart::new(format!("weekly illness deaths {stratum}"), "week", "deaths");
    for (i, year) in years.enumerate() {
        if let Some(s) = series.get(&(year, stratum)) {
            let pts = weeks(52).zip(s.counts_f64()).collect();
            chart = chart.line(year.to_string(), pts, PALETTE[i % PALETTE.len()]);
        }
    }
    chart
}

pub fn excess_chart(series: &AnnualWeeklySeries, points: &[WeeklyExcessPoint]) -> Chart {
    Chart::new(format!("{} {} observed vs expected", series.year, series.stratum), "week", "illness deaths")
        .line(
            "observed",
            points.iter().map(|p| (f64::from(p.week), p.observed as f64)).collect(),
            PALETTE[0],
        )
        .line(
            "expected",
            points.iter().map(|p| (f64::from(p.week), p.expected)).collect(),
            PALETTE[1],
        )
}

/// Weekly percentage excess, males against females, weeks numbered
/// consecutively across the forecast years.
pub fn sex_pct_chart(male: &StratumModel, female: &StratumModel, series: &SeriesMap) -> Result<Chart> {
    let curve = |m: &StratumModel| -> Result<Vec<(f64, f64)>> {
        let mut pts = Vec::new();
        for (i, fc) in m.forecasts.iter().enumerate() {
            let Some(s) = series.get(&(fc.year, m.stratum)) else { continue };
            for p in weekly_excess_curve(s, fc)? {
                if let Some(pct) = p.pct_excess {
                    pts.push(((52 * i) as f64 + f64::from(p.week), pct));
                }
            }
        }
        Ok(pts)
    };
    Ok(
        Chart::new(format!("weekly excess %, {} by sex", male.stratum.age_group), "week since start of forecast", "excess %")
            .line("male", curve(male)?, PALETTE[5])
            .line("female", curve(female)?, PALETTE[0])
            .rule(0.0),
    )
}

/// Yearly fitted values of one parameter with its trend line, extended
/// dashed through the forecast years.
pub fn parameter_chart(model: &StratumModel, parameter: Parameter) -> Chart {
    let value = |f: &PolyFit| match parameter {
        Parameter::Sigma => f.sigma,
        p => f.coefficients[p as usize],
    };
    let trend = model.trends.get(parameter);
    let ref_years: Vec<i32> = model.fits.iter().map(|f| f.year).collect();
    let fc_years: Vec<i32> = model.forecasts.iter().map(|f| f.year).collect();
    let line = |ys: &[i32]| ys.iter().map(|&y| (f64::from(y), trend.at(y))).collect::<Vec<_>>();
    let mut ext = ref_years.last().copied().into_iter().collect::<Vec<_>>();
    ext.extend(&fc_years);
    Chart::new(format!("{parameter} {}", model.stratum), "year", parameter.to_string())
        .line(
            "fitted",
            model.fits.iter().map(|f| (f64::from(f.year), value(f))).collect(),
            PALETTE[2],
        )
        .line("trend", line(&ref_years), PALETTE[0])
        .dashed("trend forecast", line(&ext), PALETTE[0])
}

/// Adjusted R² and Anderson–Darling p-value per reference year.
pub fn goodness_chart(fits: &[PolyFit]) -> Chart {
    let pts = |g: fn(&PolyFit) -> Option<f64>| {
        fits.iter()
            .filter_map(|f| g(f).map(|v| (f64::from(f.year), v)))
            .collect::<Vec<_>>()
    };
    let title = fits.first().map(|f| f.stratum.to_string()).unwrap_or_default();
    Chart::new(format!("goodness of fit {title}"), "year", "value")
        .line("adjusted R²", pts(|f| f.adj_r2), PALETTE[5])
        .line("AD p-value", pts(|f| f.ad_pvalue), PALETTE[4])
        .rule(0.05)
}

pub fn share_chart(share: &BTreeMap<i32, f64>) -> Chart {
    Chart::new("non-illness deaths", "year", "% of all deaths").line(
        "non-illness %",
        share.iter().map(|(&y, &p)| (f64::from(y), p)).collect(),
        PALETTE[2],
    )
}

/// Excess deaths by age group for one period and sex, as a polyline over
/// the age-group index.
pub fn age_profile_chart(estimates: &[ExcessEstimate], period: Period, sex: SexGroup, percent: bool) -> Chart {
    let rows: Vec<&ExcessEstimate> = period_rows(estimates, period, sex)
        .into_iter()
        .filter(|e| e.stratum.age_group != AgeGroup::All)
        .collect();
    let pick = |e: &ExcessEstimate| if percent { (e.delta_psi_pct, e.delta_psi_ci) } else { (e.psi, e.psi_ci) };
    let x: Vec<f64> = (1..=rows.len()).map(|i| i as f64).collect();
    let labels: Vec<&str> = rows.iter().map(|e| e.stratum.age_group.label()).collect();
    Chart::new(
        format!("{} {period} {sex} by age ({})", if percent { "excess %" } else { "excess deaths" }, labels.join(", ")),
        "age group index",
        if percent { "excess %" } else { "excess deaths" },
    )
    .line("estimate", x.iter().copied().zip(rows.iter().map(|e| pick(e).0)).collect(), PALETTE[0])
    .band(
        "interval",
        x,
        rows.iter().map(|e| pick(e).1 .0).collect(),
        rows.iter().map(|e| pick(e).1 .1).collect(),
        PALETTE[0],
    )
    .rule(0.0)
}

// ---- manifest -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes,
        sha256: hex::encode(hasher.finalize()),
    })
}

/// What was run, on which inputs, producing which files. Holds no
/// timestamps so identical runs give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn build<C: Serialize>(command: &str, config: &C, inputs: &[PathBuf], out: &OutputDir) -> Result<Self> {
        let inputs = inputs.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>>>()?;
        let mut outputs = Vec::new();
        for rel in out.written() {
            let mut d = digest_file(&out.path(rel))?;
            d.path = rel.clone();
            outputs.push(d);
        }
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            inputs,
            outputs,
        })
    }

    pub fn write(&self, out: &mut OutputDir) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        out.write_text("manifest.json", &text)?;
        Ok(())
    }
}

/// File-name fragment for a stratum, e.g. `male_60-69`.
pub fn stratum_slug(s: StratumKey) -> String {
    format!("{}_{}", s.sex, s.age_group.label().replace('+', "plus"))
}

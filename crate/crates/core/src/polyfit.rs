//! Quartic seasonal model fitted by ordinary least squares.
//!
//! The weekly series of one year is modeled as
//! `d(w) = α + β₁w + β₂w² + β₃w³ + β₄w⁴ + ε` for `w = 1..=52`.
//! The raw Vandermonde design in `w` is badly conditioned (its columns
//! range from 1 to 7.3·10⁶), so the solve runs on the centered and scaled
//! variable `u = (w − 26.5) / 25.5 ∈ [−1, 1]` through a Householder QR
//! factorization; the coefficients are then expanded back into the raw-week
//! basis, which is what everything downstream reports and extrapolates.
//!
//! Residuals follow the convention `ε̂_w = d̂(w) − d(w)` (fitted minus
//! observed).

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::aggregate::{AnnualWeeklySeries, StratumKey};
use crate::calendar::FULL_WEEKS;
use crate::error::{Error, Result};

pub const DEGREE: usize = 4;
pub const N_COEF: usize = DEGREE + 1;
/// Predictors excluding the intercept.
pub const PREDICTORS: usize = DEGREE;

const CENTER: f64 = 26.5;
const HALF_RANGE: f64 = 25.5;

pub type Coefficients = [f64; N_COEF];

/// Row `w` of the raw design: `(1, w, w², w³, w⁴)`.
pub fn design_row(w: f64) -> Coefficients {
    let mut row = [1.0; N_COEF];
    for j in 1..N_COEF {
        row[j] = row[j - 1] * w;
    }
    row
}

pub fn design_matrix(weeks: &[u32]) -> Vec<Coefficients> {
    weeks.iter().map(|&w| design_row(f64::from(w))).collect()
}

fn scaled_row(w: f64) -> Coefficients {
    design_row((w - CENTER) / HALF_RANGE)
}

/// Horner evaluation of raw-basis coefficients at week `w`.
pub fn evaluate(coefficients: &Coefficients, w: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * w + c)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Expands `Σ γ_k ((w − c)/s)^k` into powers of `w`.
fn scaled_to_raw(gamma: &Coefficients) -> Coefficients {
    let mut raw = [0.0; N_COEF];
    for (k, &g) in gamma.iter().enumerate() {
        let gk = g / HALF_RANGE.powi(k as i32);
        for (j, r) in raw.iter_mut().enumerate().take(k + 1) {
            *r += gk * binomial(k, j) * (-CENTER).powi((k - j) as i32);
        }
    }
    raw
}

/// Householder QR of the scaled quartic design over weeks `1..=n`.
#[derive(Debug, Clone)]
pub struct QuarticDesign {
    n: usize,
    /// Unit Householder vectors, `reflectors[k]` acting on rows `k..n`.
    reflectors: Vec<Vec<f64>>,
    r: [[f64; N_COEF]; N_COEF],
}

impl QuarticDesign {
    pub fn new(n: usize) -> Result<Self> {
        if n < N_COEF {
            return Err(Error::Fit(format!(
                "need at least {N_COEF} weeks for a quartic, got {n}"
            )));
        }
        let mut a: Vec<Coefficients> = (1..=n).map(|w| scaled_row(w as f64)).collect();
        let mut reflectors = Vec::with_capacity(N_COEF);
        for k in 0..N_COEF {
            let norm = a[k..].iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Fit("singular design".into()));
            }
            let alpha = if a[k][k] > 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = a[k..].iter().map(|row| row[k]).collect();
            v[0] -= alpha;
            let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= vnorm);
            for j in k..N_COEF {
                let dot: f64 = v.iter().zip(&a[k..]).map(|(vi, row)| vi * row[j]).sum();
                for (vi, row) in v.iter().zip(a[k..].iter_mut()) {
                    row[j] -= 2.0 * vi * dot;
                }
            }
            reflectors.push(v);
        }
        let mut r = [[0.0; N_COEF]; N_COEF];
        for i in 0..N_COEF {
            r[i][i..].copy_from_slice(&a[i][i..]);
        }
        let scale = r[0][0].abs();
        if (0..N_COEF).any(|i| r[i][i].abs() <= 1e-12 * scale) {
            return Err(Error::Fit("numerically singular design".into()));
        }
        Ok(QuarticDesign { n, reflectors, r })
    }

    /// Shared factorization for the 52 full weeks.
    pub fn weekly() -> &'static QuarticDesign {
        static DESIGN: OnceLock<QuarticDesign> = OnceLock::new();
        DESIGN.get_or_init(|| QuarticDesign::new(FULL_WEEKS).expect("52-week quartic design is full rank"))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Least-squares coefficients in the raw-week basis.
    pub fn solve(&self, y: &[f64]) -> Result<Coefficients> {
        if y.len() != self.n {
            return Err(Error::Fit(format!("expected {} observations, got {}", self.n, y.len())));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::Fit(format!("non-finite observation {bad}")));
        }
        let mut qty = y.to_vec();
        for (k, v) in self.reflectors.iter().enumerate() {
            let dot: f64 = v.iter().zip(&qty[k..]).map(|(a, b)| a * b).sum();
            for (vi, yi) in v.iter().zip(qty[k..].iter_mut()) {
                *yi -= 2.0 * vi * dot;
            }
        }
        let mut gamma = [0.0; N_COEF];
        for i in (0..N_COEF).rev() {
            let tail: f64 = (i + 1..N_COEF).map(|j| self.r[i][j] * gamma[j]).sum();
            gamma[i] = (qty[i] - tail) / self.r[i][i];
        }
        Ok(scaled_to_raw(&gamma))
    }

    /// `xᵀ (XᵀX)⁻¹ x` for a linear functional `x = Σ weightᵢ · row(weekᵢ)`
    /// of the fitted curve. Multiplied by σ², this is the sampling variance
    /// of `Σ weightᵢ · d̂(weekᵢ)`.
    pub fn quadratic_form(&self, functional: &[(f64, f64)]) -> f64 {
        let mut x = [0.0; N_COEF];
        for &(week, weight) in functional {
            let row = scaled_row(week);
            x.iter_mut().zip(row).for_each(|(a, b)| *a += weight * b);
        }
        // Forward substitution with Rᵀ.
        let mut z = [0.0; N_COEF];
        for i in 0..N_COEF {
            let head: f64 = (0..i).map(|j| self.r[j][i] * z[j]).sum();
            z[i] = (x[i] - head) / self.r[i][i];
        }
        z.iter().map(|v| v * v).sum()
    }
}

/// Degrees-of-freedom convention for the residual standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n − 5.
    ResidualDof,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub sigma: SigmaConvention,
    /// Coverage of the residual-quantile band stored on the fit.
    pub band_level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            sigma: SigmaConvention::Population,
            band_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub year: i32,
    pub stratum: StratumKey,
    /// `(α, β₁, β₂, β₃, β₄)` in the raw-week basis.
    pub coefficients: Coefficients,
    pub fitted: Vec<f64>,
    /// Fitted minus observed.
    pub residuals: Vec<f64>,
    pub sigma: f64,
    pub adj_r2: Option<f64>,
    pub ad_stat: Option<f64>,
    pub ad_pvalue: Option<f64>,
    pub band_lo_offset: f64,
    pub band_hi_offset: f64,
}

impl PolyFit {
    pub fn at(&self, week: f64) -> f64 {
        evaluate(&self.coefficients, week)
    }
}

/// Plain least-squares quartic through `counts[w-1]` for `w = 1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticFit {
    pub coefficients: Coefficients,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

pub fn fit_quartic(counts: &[f64]) -> Result<QuarticFit> {
    let design;
    let design = if counts.len() == FULL_WEEKS {
        QuarticDesign::weekly()
    } else {
        design = QuarticDesign::new(counts.len())?;
        &design
    };
    let coefficients = design.solve(counts)?;
    let fitted: Vec<f64> = (1..=counts.len())
        .map(|w| evaluate(&coefficients, w as f64))
        .collect();
    let residuals = fitted.iter().zip(counts).map(|(f, d)| f - d).collect();
    Ok(QuarticFit {
        coefficients,
        fitted,
        residuals,
    })
}

pub fn residual_sigma(residuals: &[f64], convention: SigmaConvention) -> f64 {
    let n = residuals.len();
    if n == 0 {
        return 0.0;
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let ss: f64 = residuals.iter().map(|r| (r - mean).powi(2)).sum();
    let denom = match convention {
        SigmaConvention::Population => n as f64,
        SigmaConvention::ResidualDof => n.saturating_sub(N_COEF).max(1) as f64,
    };
    (ss / denom).sqrt()
}

/// Fits the quartic to one annual series and computes its diagnostics.
pub fn ols_fit(series: &AnnualWeeklySeries, opts: &FitOptions) -> Result<PolyFit> {
    if series.counts.len() != FULL_WEEKS {
        return Err(Error::Fit(format!(
            "{} {} has {} weekly counts, expected {FULL_WEEKS}",
            series.year,
            series.stratum,
            series.counts.len()
        )));
    }
    let counts = series.counts_f64();
    let QuarticFit {
        coefficients,
        fitted,
        residuals,
    } = fit_quartic(&counts)?;

    let sigma = residual_sigma(&residuals, opts.sigma);
    let adj_r2 = adjusted_r2(&residuals, &counts, PREDICTORS).ok();
    let ad = anderson_darling(&residuals).ok();
    let (band_lo_offset, band_hi_offset) = band_offsets(&residuals, opts.band_level)?;

    Ok(PolyFit {
        year: series.year,
        stratum: series.stratum,
        coefficients,
        fitted,
        residuals,
        sigma,
        adj_r2,
        ad_stat: ad.map(|a| a.statistic),
        ad_pvalue: ad.map(|a| a.p_value),
        band_lo_offset,
        band_hi_offset,
    })
}

/// `1 − (1 − R²)(n − 1)/(n − p − 1)`, with R² taken about the mean count.
///
/// A series with no variance is a perfect fit (1.0) when the residuals are
/// zero and an error otherwise.
pub fn adjusted_r2(residuals: &[f64], counts: &[f64], predictors: usize) -> Result<f64> {
    let n = counts.len();
    if residuals.len() != n {
        return Err(Error::Parameter("residuals and counts differ in length".into()));
    }
    if n <= predictors + 1 {
        return Err(Error::Parameter(format!(
            "adjusted R² needs more than {} observations",
            predictors + 1
        )));
    }
    let mean = counts.iter().sum::<f64>() / n as f64;
    let sst: f64 = counts.iter().map(|c| (c - mean).powi(2)).sum();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let scale = counts.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
    if sst <= (1e-12 * scale).powi(2) * n as f64 {
        return if sse <= (1e-9 * scale).powi(2) * n as f64 {
            Ok(1.0)
        } else {
            Err(Error::Degenerate("counts have zero variance but residuals do not vanish".into()))
        };
    }
    let r2 = 1.0 - sse / sst;
    Ok(1.0 - (1.0 - r2) * (n - 1) as f64 / (n - predictors - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AndersonDarling {
    /// A².
    pub statistic: f64,
    /// A*² = A²(1 + 0.75/n + 2.25/n²).
    pub modified: f64,
    pub p_value: f64,
}

/// `ln Φ(z)`, accurate far into the lower tail.
fn ln_norm_cdf(z: f64) -> f64 {
    (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
}

/// Anderson–Darling normality test with mean and variance estimated from
/// the sample.
pub fn anderson_darling(sample: &[f64]) -> Result<AndersonDarling> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::Degenerate(format!(
            "Anderson-Darling needs at least 8 values, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let mut z: Vec<f64> = sample.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);

    let mut acc = 0.0;
    for i in 0..n {
        let lower = ln_norm_cdf(z[i]);
        // ln(1 − Φ(z)) = ln Φ(−z)
        let upper = ln_norm_cdf(-z[n - 1 - i]);
        acc += (2 * i + 1) as f64 * (lower + upper);
    }
    let statistic = -nf - acc / nf;
    let modified = statistic * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    Ok(AndersonDarling {
        statistic,
        modified,
        p_value: ad_pvalue(modified),
    })
}

/// Piecewise-exponential p-value for the modified statistic (normal
/// distribution, both parameters estimated).
pub fn ad_pvalue(modified: f64) -> f64 {
    let a = modified;
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    p.clamp(0.0, 1.0)
}

/// Quantile by linear interpolation between order statistics (inclusive,
/// `h = (n − 1)q`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("confidence level {level} outside (0, 1)")))
    }
}

/// Band offsets from the fitted curve that bracket the central `level`
/// share of observed-minus-fitted deviations.
pub fn band_offsets(residuals: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    if residuals.is_empty() {
        return Err(Error::Parameter("no residuals".into()));
    }
    let mut dev: Vec<f64> = residuals.iter().map(|r| -r).collect();
    dev.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&dev, (1.0 - level) / 2.0),
        quantile_sorted(&dev, (1.0 + level) / 2.0),
    ))
}

/// Per-week `(lo, hi)` residual-quantile band around the fitted curve.
pub fn confidence_band(fit: &PolyFit, level: f64) -> Result<Vec<(f64, f64)>> {
    let (lo, hi) = band_offsets(&fit.residuals, level)?;
    Ok(fit.fitted.iter().map(|f| (f + lo, f + hi)).collect())
}

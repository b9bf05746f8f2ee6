//! Test oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use exmort::aggregate::{AnnualWeeklySeries, StratumKey};
use exmort::synth::SynthConfig;

pub const WEEKS: usize = 52;

pub fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("finite rational")
}

/// Least-squares quartic coefficients in the raw week basis, solved
/// exactly: the 5×5 normal equations XᵀXβ = Xᵀy in rational arithmetic
/// with Gauss–Jordan elimination.
pub fn exact_ols(y: &[u64]) -> [BigRational; 5] {
    let n = y.len();
    let pow = |w: usize, k: usize| -> BigRational { rat((w as i64).pow(k as u32)) };
    // augmented [XᵀX | Xᵀy]
    let mut m: Vec<Vec<BigRational>> = (0..5)
        .map(|r| {
            let mut row: Vec<BigRational> = (0..5)
                .map(|c| (1..=n).fold(BigRational::zero(), |acc, w| acc + pow(w, r + c)))
                .collect();
            row.push((1..=n).fold(BigRational::zero(), |acc, w| {
                acc + pow(w, r) * rat(y[w - 1] as i64)
            }));
            row
        })
        .collect();
    for col in 0..5 {
        let pivot = (col..5).find(|&r| !m[r][col].is_zero()).expect("full rank");
        m.swap(col, pivot);
        let inv = BigRational::one() / m[col][col].clone();
        for k in col..6 {
            m[col][k] = m[col][k].clone() * inv.clone();
        }
        for r in 0..5 {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for k in col..6 {
                    let v = m[col][k].clone() * f.clone();
                    m[r][k] = m[r][k].clone() - v;
                }
            }
        }
    }
    std::array::from_fn(|i| m[i][5].clone())
}

/// Raw-basis coefficients of `Σ c_k·C(w, k)`, an integer-valued
/// polynomial for integer `w`.
pub fn binomial_to_raw(c: &[i64; 5]) -> [BigRational; 5] {
    // C(w,k) as polynomials in w, coefficients low to high
    let basis: [[i64; 5]; 5] = [
        [1, 0, 0, 0, 0],
        [0, 1, 0, 0, 0],
        [0, -1, 1, 0, 0],   // w(w-1)/2
        [0, 2, -3, 1, 0],   // w(w-1)(w-2)/6
        [0, -6, 11, -6, 1], // w(w-1)(w-2)(w-3)/24
    ];
    let denom = [1, 1, 2, 6, 24];
    let mut out: [BigRational; 5] = std::array::from_fn(|_| BigRational::zero());
    for k in 0..5 {
        for j in 0..5 {
            out[j] = out[j].clone() + rat(c[k] * basis[k][j]) / rat(denom[k]);
        }
    }
    out
}

pub fn eval_rational(coef: &[BigRational; 5], w: i64) -> BigRational {
    coef.iter().rev().fold(BigRational::zero(), |acc, c| acc * rat(w) + c.clone())
}

/// A seeded integer-valued polynomial of degree `≤ 4`, non-negative on
/// weeks 1..=52, with its exact raw coefficients.
pub fn integer_polynomial(rng: &mut ChaCha8Rng) -> (Vec<u64>, [BigRational; 5], usize) {
    loop {
        let degree = rng.random_range(0..=4usize);
        let mut c = [0i64; 5];
        c[0] = rng.random_range(200..5000);
        let scale = [0, 60, 8, 2, 1];
        for k in 1..=degree {
            let mut v = 0;
            while v == 0 {
                v = rng.random_range(-scale[k]..=scale[k]);
            }
            c[k] = v;
        }
        let raw = binomial_to_raw(&c);
        let values: Vec<BigRational> = (1..=WEEKS as i64).map(|w| eval_rational(&raw, w)).collect();
        if values.iter().all(|v| !v.is_negative() && v.is_integer()) {
            let counts = values.iter().map(|v| v.to_integer().to_u64().unwrap()).collect();
            return (counts, raw, degree);
        }
    }
}

/// Expected weekly counts of a seeded U-shaped quartic year.
pub fn quartic_shape(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let level = rng.random_range(600.0..3000.0);
    let depth = rng.random_range(0.3..1.6);
    let skew = rng.random_range(-0.02..0.02);
    let kurt = rng.random_range(-0.0003..0.0001);
    (1..=WEEKS)
        .map(|w| {
            let x = w as f64 - 27.0;
            level + depth * x * x + skew * x.powi(3) + kurt * x.powi(4)
        })
        .collect()
}

/// `means` plus Normal(0, sd) noise, rounded to counts.
pub fn with_noise(means: &[f64], sd: f64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let noise = Normal::new(0.0, sd).unwrap();
    means
        .iter()
        .map(|m| (m + noise.sample(rng)).round().max(0.0) as u64)
        .collect()
}

/// A seeded quartic year with Normal(0, 40) noise.
pub fn noisy_quartic(rng: &mut ChaCha8Rng) -> Vec<u64> {
    let means = quartic_shape(rng);
    with_noise(&means, 40.0, rng)
}

pub fn series(year: i32, counts: Vec<u64>) -> AnnualWeeklySeries {
    AnnualWeeklySeries::from_counts(year, StratumKey::TOTAL, counts, 0).unwrap()
}

/// `|a − b| ≤ tol·|b|`.
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs()
}

/// Coefficient error measured by its largest contribution over the fit
/// domain, relative to the largest value of the curve; usable when the
/// true coefficient is zero.
pub fn contribution_error(got: &[f64; 5], want: &[f64; 5], max_value: f64) -> f64 {
    (0..5)
        .map(|k| (got[k] - want[k]).abs() * (WEEKS as f64).powi(k as i32))
        .fold(0.0, f64::max)
        / max_value.max(1.0)
}

/// The default synthetic registry scaled to roughly a twentieth of its
/// size, over 12 reference and 2 forecast years, for fast end-to-end
/// tests.
pub fn small_synth() -> SynthConfig {
    let mut cfg = SynthConfig {
        reference_years: (2000, 2011),
        forecast_years: (2012, 2013),
        anchor_year: 2000,
        ..SynthConfig::default()
    };
    for t in &mut cfg.trends[..5] {
        t.intercept *= 0.05;
        t.slope *= 0.05;
    }
    cfg.trends[5].intercept = 9.0;
    cfg.trends[5].slope = 0.1;
    cfg
}

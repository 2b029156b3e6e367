//! Goodness-of-fit diagnostics: normal cdf, one- and two-sample
//! Kolmogorov-Smirnov, and Pearson chi-square tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

const KOLMOGOROV_TERMS: usize = 100;

/// Standard normal cdf.
///
/// Rational approximation of Hart (1968) for `|z| < 7.07`, continued fraction
/// beyond; absolute error below `1e-14`. The lower tail is computed once and
/// reflected, so `Φ(−z) = 1 − Φ(z)` holds by construction.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let x = z.abs();
    let lower = if x > 37.0 {
        0.0
    } else {
        let e = (-0.5 * x * x).exp();
        if x < 7.071_067_811_865_47 {
            let num = ((((((3.526_249_659_989_11e-2 * x + 0.700_383_064_443_688) * x
                + 6.373_962_203_531_65)
                * x
                + 33.912_866_078_383)
                * x
                + 112.079_291_497_871)
                * x
                + 221.213_596_169_931)
                * x
                + 220.206_867_912_376)
                * e;
            let den = ((((((8.838_834_764_831_84e-2 * x + 1.755_667_163_182_64) * x
                + 16.064_177_579_207)
                * x
                + 86.780_732_202_946_1)
                * x
                + 296.564_248_779_674)
                * x
                + 637.333_633_378_831)
                * x
                + 793.826_512_519_948)
                * x
                + 440.413_735_824_752;
            num / den
        } else {
            let mut b = x + 0.65;
            b = x + 4.0 / b;
            b = x + 3.0 / b;
            b = x + 2.0 / b;
            b = x + 1.0 / b;
            e / b / 2.506_628_274_631
        }
    };
    if z > 0.0 {
        1.0 - lower
    } else {
        lower
    }
}

/// One-sample KS distance `max_i max(i/n − F(v_i), F(v_i) − (i−1)/n)`.
/// `sorted` must be ascending.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::TooFewValues { needed: 1, got: 0 });
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]), "values must be sorted");
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0, |acc: f64, (i, &v)| {
        let f = cdf(v);
        let above = (i as f64 + 1.0) / n - f;
        let below = f - i as f64 / n;
        acc.max(above).max(below)
    }))
}

/// `P(K > λ)` for the Kolmogorov distribution, series truncated at 100 terms.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        // Jacobi-theta form converges fast for small λ.
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut cdf = 0.0;
        for k in 1..=KOLMOGOROV_TERMS {
            let odd = (2 * k - 1) as f64;
            cdf += (-odd * odd * pi2 / (8.0 * lambda * lambda)).exp();
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf
    } else {
        let mut sum = 0.0;
        for k in 1..=KOLMOGOROV_TERMS {
            let kf = k as f64;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * (-2.0 * kf * kf * lambda * lambda).exp();
        }
        2.0 * sum
    };
    q.clamp(0.0, 1.0)
}

/// Asymptotic KS p-value with the Stephens effective-size correction.
pub fn ks_pvalue(distance: f64, n_eff: f64) -> f64 {
    let root = n_eff.sqrt();
    kolmogorov_survival((root + 0.12 + 0.11 / root) * distance)
}

/// One-sample KS test; sorts a copy of `values`.
pub fn ks_test(values: &[f64], cdf: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let d = ks_statistic(&sorted, cdf)?;
    Ok((d, ks_pvalue(d, sorted.len() as f64)))
}

/// Two-sample KS test. Ties (including infinite values) are handled by
/// stepping both empirical cdfs past each distinct value together.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFewValues {
            needed: 1,
            got: a.len().min(b.len()),
        });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    Ok((d, ks_pvalue(d, n_eff)))
}

/// Pearson goodness-of-fit test of category counts against probabilities.
/// Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<(f64, usize, f64)> {
    if observed.len() != probs.len() {
        return Err(Error::MisalignedSupports);
    }
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * total as f64;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        } else if o > 0 {
            return Ok((f64::INFINITY, cells.max(1), 0.0));
        }
    }
    let df = cells.saturating_sub(1);
    Ok((stat, df, chi_square_sf(stat, df)))
}

/// Pearson independence test on a contingency table (rows × columns).
/// Empty rows and columns are dropped before counting degrees of freedom.
pub fn chi_square_independence(table: &[Vec<u64>]) -> Result<(f64, usize, f64)> {
    let cols = table.first().map_or(0, Vec::len);
    if table.iter().any(|r| r.len() != cols) {
        return Err(Error::MisalignedSupports);
    }
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: u64 = row_sums.iter().sum();
    if total == 0 {
        return Err(Error::TooFewValues { needed: 1, got: 0 });
    }
    let mut stat = 0.0;
    for (r, &rs) in table.iter().zip(&row_sums) {
        for (&o, &cs) in r.iter().zip(&col_sums) {
            let e = rs as f64 * cs as f64 / total as f64;
            if e > 0.0 {
                stat += (o as f64 - e).powi(2) / e;
            }
        }
    }
    let nr = row_sums.iter().filter(|&&s| s > 0).count();
    let nc = col_sums.iter().filter(|&&s| s > 0).count();
    let df = nr.saturating_sub(1) * nc.saturating_sub(1);
    Ok((stat, df, chi_square_sf(stat, df)))
}

fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64)
        .map(|d| d.sf(stat))
        .unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalityDiagnostics {
    pub mean: f64,
    /// Unbiased (denominator `R − 1`).
    pub variance: f64,
    pub skewness: f64,
    pub ks_distance: f64,
    pub ks_p: f64,
}

/// Moments and KS distance against the standard normal.
pub fn normality_diagnostics(values: &[f64]) -> Result<NormalityDiagnostics> {
    if values.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(s2, s3), &v| {
        let d = v - mean;
        (s2 + d * d, s3 + d * d * d)
    });
    let variance = m2 / (n - 1.0);
    let skewness = if m2 > 0.0 {
        (m3 / n) / (m2 / n).powf(1.5)
    } else {
        0.0
    };
    let (ks_distance, ks_p) = ks_test(values, normal_cdf)?;
    Ok(NormalityDiagnostics {
        mean,
        variance,
        skewness,
        ks_distance,
        ks_p,
    })
}

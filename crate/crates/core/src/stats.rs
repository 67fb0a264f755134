//! Small descriptive-statistics helpers.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Median of an already sorted slice (average of the two middle values for
/// even lengths). Returns NaN for an empty slice.
pub fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (denominator `n - 1`); 0 for fewer than two values.
pub fn sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Sample covariance matrix of the rows of `rows` (each of length `p`),
/// returned row-major `p × p`.
pub fn covariance(rows: &[Vec<f64>], p: usize) -> Vec<f64> {
    let n = rows.len();
    let mut out = vec![0.0; p * p];
    if n < 2 {
        return out;
    }
    // Mean as a shift from the first row, so identical rows give exactly
    // zero covariance.
    let mut m = rows[0][..p].to_vec();
    for r in rows {
        for k in 0..p {
            m[k] += (r[k] - rows[0][k]) / n as f64;
        }
    }
    for r in rows {
        for a in 0..p {
            let da = r[a] - m[a];
            for b in a..p {
                out[a * p + b] += da * (r[b] - m[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = out[a * p + b] / (n - 1) as f64;
            out[a * p + b] = v;
            out[b * p + a] = v;
        }
    }
    out
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Upper tail `P(χ²_df > x)`.
pub fn chi2_upper(x: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let d = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    (1.0 - d.cdf(x.max(0.0))).clamp(0.0, 1.0)
}

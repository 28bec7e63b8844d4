use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::analytic::norm_cdf;
use crate::error::{domain, Result};

/// Equal-probability bins of the chi-square test.
pub const REPORT_BINS: usize = 64;

const MIN_SAMPLES: usize = 1000;
const TRUNCATION: f64 = 4.5;

/// Goodness-of-fit summary of a sample against the standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov-Smirnov distance to N(0, 1).
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// Chi-square over equal-probability bins of N(0, 1) truncated to ±4.5.
    pub chi_square: f64,
    pub chi_square_p_value: f64,
}

impl DistributionReport {
    pub fn ks_passes(&self, alpha: f64) -> bool {
        self.ks_p_value > alpha
    }

    pub fn chi_square_passes(&self, alpha: f64) -> bool {
        self.chi_square_p_value > alpha
    }

    pub fn csv_header() -> &'static str {
        "count,mean,variance,skewness,excess_kurtosis,ks_statistic,ks_p_value,chi_square,chi_square_p_value"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.count,
            self.mean,
            self.variance,
            self.skewness,
            self.excess_kurtosis,
            self.ks_statistic,
            self.ks_p_value,
            self.chi_square,
            self.chi_square_p_value
        )
    }
}

fn truncated_cdf(x: f64) -> f64 {
    let lo = norm_cdf(-TRUNCATION);
    let hi = norm_cdf(TRUNCATION);
    ((norm_cdf(x) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Asymptotic Kolmogorov survival function with Stephens' small-sample
/// correction.
fn kolmogorov_p_value(statistic: f64, count: usize) -> f64 {
    let root = (count as f64).sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * statistic;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn distribution_report(samples: &[f64]) -> Result<DistributionReport> {
    let count = samples.len();
    if count < MIN_SAMPLES {
        return domain(format!(
            "distribution report needs at least {MIN_SAMPLES} samples, got {count}"
        ));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return domain("samples must be finite");
    }
    let n = count as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let variance = m2 / (n - 1.0);
    let (pop2, pop3, pop4) = (m2 / n, m3 / n, m4 / n);
    let (skewness, excess_kurtosis) = if pop2 > 0.0 {
        (pop3 / pop2.powf(1.5), pop4 / (pop2 * pop2) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ks_statistic = sorted
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = norm_cdf(x);
            ((j + 1) as f64 / n - f).max(f - j as f64 / n)
        })
        .fold(0.0, f64::max);

    let mut counts = [0u64; REPORT_BINS];
    for &x in samples {
        let bin = (truncated_cdf(x) * REPORT_BINS as f64) as usize;
        counts[bin.min(REPORT_BINS - 1)] += 1;
    }
    let expected = n / REPORT_BINS as f64;
    let chi_square = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum::<f64>();
    let dof = ChiSquared::new((REPORT_BINS - 1) as f64).expect("positive degrees of freedom");

    Ok(DistributionReport {
        count,
        mean,
        variance,
        skewness,
        excess_kurtosis,
        ks_statistic,
        ks_p_value: kolmogorov_p_value(ks_statistic, count),
        chi_square,
        chi_square_p_value: dof.sf(chi_square),
    })
}

//! Closed-form oracles: normal distribution, Black-Scholes call, and the
//! binned terminal-distribution pricer.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::erfc;

use crate::error::{domain, Result};
use crate::market::MarketConfig;

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal cdf through `erfc`, accurate to about 1e-15 absolute.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Black-Scholes European call. Zero volatility gives the discounted forward
/// intrinsic value; a zero strike gives `s0`.
pub fn bs_call(s0: f64, strike: f64, rate: f64, sigma: f64, total_time: f64) -> f64 {
    if strike == 0.0 {
        return s0;
    }
    let discounted_strike = strike * (-rate * total_time).exp();
    if sigma == 0.0 {
        return (s0 - discounted_strike).max(0.0);
    }
    let vol = sigma * total_time.sqrt();
    let d1 = ((s0 / strike).ln() + (rate + 0.5 * sigma * sigma) * total_time) / vol;
    let d2 = d1 - vol;
    s0 * norm_cdf(d1) - discounted_strike * norm_cdf(d2)
}

/// Terminal price law of GBM with exact moments:
/// `ln S_T ~ N(ln S0 + (μ − σ²/2)T, σ²T)`.
#[derive(Debug, Clone, Copy)]
pub struct Lognormal {
    pub log_mean: f64,
    pub log_sd: f64,
}

impl Lognormal {
    pub fn terminal(market: &MarketConfig) -> Self {
        let t = market.total_time;
        let sigma = market.sigma;
        Self {
            log_mean: market.s0.ln() + (market.mu - 0.5 * sigma * sigma) * t,
            log_sd: sigma * t.sqrt(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if self.log_sd == 0.0 {
            return if x.ln() >= self.log_mean { 1.0 } else { 0.0 };
        }
        norm_cdf((x.ln() - self.log_mean) / self.log_sd)
    }

    /// `P(S_T > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if self.log_sd == 0.0 {
            return if x.ln() < self.log_mean { 1.0 } else { 0.0 };
        }
        norm_cdf((self.log_mean - x.ln()) / self.log_sd)
    }
}

/// Terminal distribution discretised into `2^k` equal-width price bins, each
/// represented by its midpoint.
#[derive(Debug, Clone)]
pub struct BinsModel {
    pub bits: u32,
    pub midpoints: Vec<f64>,
    pub masses: Vec<f64>,
}

impl BinsModel {
    /// Bin masses from cdf differences; mass outside `[lower, upper]` is
    /// assigned to the end bins.
    pub fn new(market: &MarketConfig, bits: u32, lower: f64, upper: f64) -> Result<Self> {
        if bits == 0 || bits > 30 {
            return domain(format!("bin bits must lie in 1..=30, got {bits}"));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower && lower >= 0.0) {
            return domain(format!("degenerate bin bounds [{lower}, {upper}]"));
        }
        let law = Lognormal::terminal(market);
        let count = 1usize << bits;
        let width = (upper - lower) / count as f64;
        let edges: Vec<f64> = (0..=count).map(|j| lower + width * j as f64).collect();
        let cdfs: Vec<f64> = edges.iter().map(|&e| law.cdf(e)).collect();
        let mut masses: Vec<f64> = cdfs.windows(2).map(|w| w[1] - w[0]).collect();
        masses[0] += cdfs[0];
        masses[count - 1] += 1.0 - cdfs[count];
        let midpoints = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(Self {
            bits,
            midpoints,
            masses,
        })
    }

    pub fn expected_payoff(&self, strike: f64) -> f64 {
        self.midpoints
            .iter()
            .zip(&self.masses)
            .map(|(&mid, &mass)| mass * (mid - strike).max(0.0))
            .sum()
    }
}

/// Discounted call price from the binned terminal law.
pub fn bins_price(market: &MarketConfig, bits: u32, lower: f64, upper: f64) -> Result<f64> {
    market.validate()?;
    let model = BinsModel::new(market, bits, lower, upper)?;
    Ok(market.discount() * model.expected_payoff(market.strike))
}

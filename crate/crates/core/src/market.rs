//! Market parameters and the default register codecs derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::fixedpoint::{FixedPointCodec, RegisterLayout};

/// Heston stochastic-variance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    /// Mean-reversion speed κ.
    pub kappa: f64,
    /// Long-run variance θ.
    pub theta: f64,
    /// Volatility of variance ξ.
    pub xi: f64,
    /// Correlation ρ between the price and variance Brownian motions.
    pub rho: f64,
    /// Initial variance ν₀.
    pub v0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub s0: f64,
    /// Drift per year.
    pub mu: f64,
    /// Volatility per √year. Ignored by Heston dynamics, which use √ν.
    pub sigma: f64,
    /// Time to expiry in years.
    pub total_time: f64,
    pub steps: u64,
    pub strike: f64,
    /// Discount rate.
    pub rate: f64,
    pub heston: Option<HestonParams>,
}

impl MarketConfig {
    /// Black-Scholes-Merton market with the risk-neutral convention `rate = mu`.
    pub fn bsm(s0: f64, mu: f64, sigma: f64, total_time: f64, steps: u64, strike: f64) -> Self {
        Self {
            s0,
            mu,
            sigma,
            total_time,
            steps,
            strike,
            rate: mu,
            heston: None,
        }
    }

    pub fn with_heston(mut self, heston: HestonParams) -> Self {
        self.heston = Some(heston);
        self
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        self.rate = rate;
        self
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.steps as f64
    }

    pub fn discount(&self) -> f64 {
        (-self.rate * self.total_time).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.s0,
            self.mu,
            self.sigma,
            self.total_time,
            self.strike,
            self.rate,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return domain("market parameters must be finite");
        }
        if self.s0 <= 0.0 {
            return domain(format!("s0 must be positive, got {}", self.s0));
        }
        if self.sigma < 0.0 {
            return domain(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if self.total_time <= 0.0 {
            return domain(format!("total_time must be positive, got {}", self.total_time));
        }
        if self.steps == 0 {
            return domain("steps must be at least 1");
        }
        if self.strike < 0.0 {
            return domain(format!("strike must be non-negative, got {}", self.strike));
        }
        if let Some(h) = &self.heston {
            if ![h.kappa, h.theta, h.xi, h.rho, h.v0].iter().all(|v| v.is_finite()) {
                return domain("Heston parameters must be finite");
            }
            if h.v0 < 0.0 {
                return domain(format!("v0 must be non-negative, got {}", h.v0));
            }
            if h.rho.abs() > 1.0 {
                return domain(format!("|rho| must not exceed 1, got {}", h.rho));
            }
            if h.xi < 0.0 {
                return domain(format!("xi must be non-negative, got {}", h.xi));
            }
        }
        Ok(())
    }
}

/// Codecs for every register written by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecSet {
    pub variable: FixedPointCodec,
    pub price: FixedPointCodec,
    pub payoff: FixedPointCodec,
    /// Variance register (Heston only).
    pub vol: Option<FixedPointCodec>,
    /// Variance stochastic-variable register (Heston only).
    pub vol_variable: Option<FixedPointCodec>,
}

/// Support half-width of the truncated normal sampler, in standard deviations.
pub const SAMPLER_HALF_WIDTH: f64 = 4.5;

impl CodecSet {
    /// Default codecs: price on `[0, 3·S0]`, variable on `±4.5·√Δt`, payoff on
    /// `[0, price_upper − K]`. Heston variance lives on `[0, 4·max(ν₀, θ)]`.
    pub fn defaults(market: &MarketConfig, layout: &RegisterLayout) -> Result<Self> {
        let price_upper = 3.0 * market.s0;
        let half = SAMPLER_HALF_WIDTH * market.dt().sqrt();
        let variable = FixedPointCodec::new(-half, half, layout.variable_bits)?;
        let price = FixedPointCodec::new(0.0, price_upper, layout.price_bits)?;
        let payoff = payoff_codec(price_upper, market.strike, layout.payoff_bits)?;
        let (vol, vol_variable) = match (market.heston, layout.vol_bits, layout.vol_variable_bits) {
            (Some(h), Some(kv), Some(kvv)) => {
                let upper = 4.0 * h.v0.max(h.theta);
                let upper = if upper > 0.0 { upper } else { 1.0 };
                // the correlated draw ρ·z₁ + √(1−ρ²)·z₂ spans at most this many σ
                let reach = h.rho.abs() + (1.0 - h.rho * h.rho).max(0.0).sqrt();
                let vhalf = SAMPLER_HALF_WIDTH * reach * market.dt().sqrt();
                (
                    Some(FixedPointCodec::new(0.0, upper, kv)?),
                    Some(FixedPointCodec::new(-vhalf, vhalf, kvv)?),
                )
            }
            (None, None, None) => (None, None),
            _ => return domain("Heston market parameters and Heston registers must come together"),
        };
        Ok(Self {
            variable,
            price,
            payoff,
            vol,
            vol_variable,
        })
    }

    /// Same number of bits in every register, as in the precision sweeps.
    pub fn uniform(market: &MarketConfig, bits: u32) -> Result<Self> {
        let mut layout = RegisterLayout::new(1, bits, bits, bits, market.steps);
        if market.heston.is_some() {
            layout = layout.with_heston(bits, bits);
        }
        Self::defaults(market, &layout)
    }

    pub fn payoff_max(&self) -> f64 {
        self.payoff.upper_bound()
    }
}

/// Payoff register on `[0, price_upper − K]`. A strike at or above the price
/// ceiling leaves only zero payoffs; the grid then keeps a unit span.
pub fn payoff_codec(price_upper: f64, strike: f64, bits: u32) -> Result<FixedPointCodec> {
    let upper = price_upper - strike;
    FixedPointCodec::new(0.0, if upper > 0.0 { upper } else { 1.0 }, bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_codecs_follow_market() {
        let market = MarketConfig::bsm(100.0, 0.05, 0.4, 1.0, 100, 100.0);
        let codecs = CodecSet::defaults(&market, &RegisterLayout::new(3, 4, 5, 4, 100)).unwrap();
        assert_eq!(codecs.price.upper_bound(), 300.0);
        assert_eq!(codecs.payoff.upper_bound(), 200.0);
        assert!((codecs.variable.upper_bound() - 0.45).abs() < 1e-15);
        assert_eq!(codecs.variable.lower_bound(), -codecs.variable.upper_bound());
    }

    #[test]
    fn validation() {
        let good = MarketConfig::bsm(100.0, 0.05, 0.4, 1.0, 100, 100.0);
        assert!(good.validate().is_ok());
        assert!(MarketConfig { sigma: -0.1, ..good }.validate().is_err());
        assert!(MarketConfig { s0: 0.0, ..good }.validate().is_err());
        assert!(MarketConfig { steps: 0, ..good }.validate().is_err());
        let bad_rho = HestonParams { kappa: 1.0, theta: 0.04, xi: 0.3, rho: 1.5, v0: 0.04 };
        assert!(good.with_heston(bad_rho).validate().is_err());
    }
}

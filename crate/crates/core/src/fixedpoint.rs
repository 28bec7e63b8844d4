//! Fixed-precision register encodings.
//!
//! A [`FixedPointCodec`] maps a real value onto one of `2^k` equally spaced
//! grid points spanning `[lower, upper]`, both endpoints included. Values
//! outside the bounds clamp to the end codes. [`RegisterLayout`] does the
//! qubit accounting for a circuit instance.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Largest supported register width.
pub const MAX_BITS: u32 = 62;

/// Uniform grid of `2^bits` points over `[lower_bound, upper_bound]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    lower_bound: f64,
    upper_bound: f64,
    bits: u32,
}

/// Result of an encode that also reports whether the value was clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoded {
    pub code: u64,
    pub clamped: bool,
}

impl FixedPointCodec {
    pub fn new(lower_bound: f64, upper_bound: f64, bits: u32) -> Result<Self> {
        if !lower_bound.is_finite() || !upper_bound.is_finite() {
            return domain("codec bounds must be finite");
        }
        if upper_bound <= lower_bound {
            return domain(format!(
                "codec upper bound {upper_bound} must exceed lower bound {lower_bound}"
            ));
        }
        if bits == 0 || bits > MAX_BITS {
            return domain(format!("codec bits must lie in 1..={MAX_BITS}, got {bits}"));
        }
        Ok(Self {
            lower_bound,
            upper_bound,
            bits,
        })
    }

    /// Codec whose grid starts at `lower_bound` with the given spacing.
    ///
    /// Choosing a dyadic spacing makes every grid point exactly representable.
    pub fn with_spacing(lower_bound: f64, spacing: f64, bits: u32) -> Result<Self> {
        if !(spacing > 0.0) || bits == 0 || bits > MAX_BITS {
            return domain("spacing must be positive and bits in range");
        }
        let upper = lower_bound + spacing * ((1u64 << bits) - 1) as f64;
        Self::new(lower_bound, upper, bits)
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Largest code, `2^bits - 1`.
    pub fn max_code(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    pub fn spacing(&self) -> f64 {
        (self.upper_bound - self.lower_bound) / self.max_code() as f64
    }

    /// Nearest grid index; ties round to the higher index.
    pub fn encode(&self, value: f64) -> Result<u64> {
        self.encode_checked(value).map(|e| e.code)
    }

    pub fn encode_checked(&self, value: f64) -> Result<Encoded> {
        if !value.is_finite() {
            return domain(format!("cannot encode non-finite value {value}"));
        }
        let max = self.max_code();
        if value <= self.lower_bound {
            return Ok(Encoded {
                code: 0,
                clamped: value < self.lower_bound,
            });
        }
        if value >= self.upper_bound {
            return Ok(Encoded {
                code: max,
                clamped: value > self.upper_bound,
            });
        }
        let position =
            (value - self.lower_bound) / (self.upper_bound - self.lower_bound) * max as f64;
        let code = ((position + 0.5).floor() as u64).min(max);
        Ok(Encoded {
            code,
            clamped: false,
        })
    }

    pub fn decode(&self, code: u64) -> Result<f64> {
        let max = self.max_code();
        if code > max {
            return domain(format!(
                "code {code} out of range for a {}-bit register",
                self.bits
            ));
        }
        Ok(self.decode_unchecked(code))
    }

    pub(crate) fn decode_unchecked(&self, code: u64) -> f64 {
        let max = self.max_code();
        if code == 0 {
            self.lower_bound
        } else if code == max {
            self.upper_bound
        } else {
            self.lower_bound + (self.upper_bound - self.lower_bound) * code as f64 / max as f64
        }
    }

    /// Snap a value to its nearest grid point.
    pub fn round(&self, value: f64) -> Result<f64> {
        self.encode(value).map(|c| self.decode_unchecked(c))
    }

    /// Mean of `count` grid values whose codes sum to `code_sum`.
    ///
    /// Callers that hold only the integer code sum and callers that hold the
    /// codes themselves both go through this, so their means agree bitwise.
    pub fn mean_of_codes(&self, code_sum: u64, count: u64) -> f64 {
        let total = count as f64 * self.max_code() as f64;
        self.lower_bound + (self.upper_bound - self.lower_bound) * (code_sum as f64 / total)
    }
}

fn ceil_log2(value: u64) -> u32 {
    if value <= 1 {
        0
    } else {
        64 - (value - 1).leading_zeros()
    }
}

/// Register widths of one circuit instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterLayout {
    /// `n`; `2^n` paths.
    pub index_bits: u32,
    /// `k_v`, stochastic variable register.
    pub variable_bits: u32,
    /// `k_s`, stock price register.
    pub price_bits: u32,
    /// `k_p`, payoff register.
    pub payoff_bits: u32,
    /// `k_σ`, variance register (Heston only).
    pub vol_bits: Option<u32>,
    /// `k_{v_σ}`, variance stochastic variable register (Heston only).
    pub vol_variable_bits: Option<u32>,
    /// Number of time steps `m`; accounted as `⌈log₂ m⌉` qubits.
    pub steps: u64,
    /// Secondary index register for nested risk valuation.
    pub secondary_index_bits: Option<u32>,
    /// Digital register receiving the per-path mean payoff in nested risk
    /// valuation; also adds the one-qubit risk flag.
    pub risk_value_bits: Option<u32>,
}

impl RegisterLayout {
    /// Base single-asset layout.
    pub fn new(
        index_bits: u32,
        variable_bits: u32,
        price_bits: u32,
        payoff_bits: u32,
        steps: u64,
    ) -> Self {
        Self {
            index_bits,
            variable_bits,
            price_bits,
            payoff_bits,
            vol_bits: None,
            vol_variable_bits: None,
            steps,
            secondary_index_bits: None,
            risk_value_bits: None,
        }
    }

    pub fn with_heston(mut self, vol_bits: u32, vol_variable_bits: u32) -> Self {
        self.vol_bits = Some(vol_bits);
        self.vol_variable_bits = Some(vol_variable_bits);
        self
    }

    pub fn with_secondary_index(mut self, secondary_index_bits: u32, risk_value_bits: u32) -> Self {
        self.secondary_index_bits = Some(secondary_index_bits);
        self.risk_value_bits = Some(risk_value_bits);
        self
    }

    pub fn is_heston(&self) -> bool {
        self.vol_bits.is_some()
    }

    pub fn timestep_bits(&self) -> u32 {
        ceil_log2(self.steps)
    }

    pub fn num_paths(&self) -> u64 {
        1u64 << self.index_bits
    }

    pub fn validate(&self) -> Result<()> {
        let registers = [
            ("index", Some(self.index_bits)),
            ("variable", Some(self.variable_bits)),
            ("price", Some(self.price_bits)),
            ("payoff", Some(self.payoff_bits)),
            ("vol", self.vol_bits),
            ("vol_variable", self.vol_variable_bits),
            ("secondary_index", self.secondary_index_bits),
            ("risk_value", self.risk_value_bits),
        ];
        for (name, bits) in registers {
            if let Some(bits) = bits {
                if bits == 0 || bits > MAX_BITS {
                    return domain(format!("{name} register width {bits} outside 1..={MAX_BITS}"));
                }
            }
        }
        if self.vol_bits.is_some() != self.vol_variable_bits.is_some() {
            return domain("Heston layouts need both vol and vol_variable registers");
        }
        if self.secondary_index_bits.is_some() != self.risk_value_bits.is_some() {
            return domain("nested layouts need both secondary index and risk value registers");
        }
        if self.steps == 0 {
            return domain("at least one time step is required");
        }
        Ok(())
    }
}

/// Total qubit count of a layout, including the time-step register and the
/// ancilla.
pub fn layout_width(layout: &RegisterLayout) -> u32 {
    let mut width = layout.index_bits
        + layout.payoff_bits
        + layout.variable_bits
        + layout.price_bits
        + layout.timestep_bits()
        + 1;
    width += layout.vol_bits.unwrap_or(0) + layout.vol_variable_bits.unwrap_or(0);
    width += layout.secondary_index_bits.unwrap_or(0);
    if let Some(bits) = layout.risk_value_bits {
        width += bits + 1;
    }
    width
}

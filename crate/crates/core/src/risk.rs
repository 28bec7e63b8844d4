//! Threshold risk metrics: probability of an expiry payoff above a
//! threshold, nested Monte-Carlo portfolio valuation, and its path-parallel
//! statevector counterpart.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaosrng::RngMode;
use crate::emulator::{simulate, EmulationConfig, PathStepper, Payoff, Precision};
use crate::error::{domain, McqpError, Result};
use crate::market::MarketConfig;
use crate::statevector::{encode_on_ancilla, normalized, Keying, McqpCircuit, QState, Register};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    /// Valuation time, strictly inside `(0, T)` and on the step grid.
    pub tau: f64,
    /// Lower portfolio-value bound.
    pub epsilon: f64,
    pub outer_paths: u64,
    pub inner_paths: u64,
}

impl RiskSpec {
    pub fn validate(&self, market: &MarketConfig) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < market.total_time) {
            return domain(format!(
                "tau must lie in (0, {}), got {}",
                market.total_time, self.tau
            ));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return domain(format!("epsilon must be finite and non-negative, got {}", self.epsilon));
        }
        if self.outer_paths == 0 || self.inner_paths == 0 {
            return domain("outer and inner path counts must be positive");
        }
        tau_steps(market, self.tau).map(|_| ())
    }
}

/// Number of steps up to `tau`; `tau` must be a multiple of `Δt`.
pub fn tau_steps(market: &MarketConfig, tau: f64) -> Result<u64> {
    let steps = tau / market.dt();
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-9 || rounded < 1.0 || rounded >= market.steps as f64 {
        return domain(format!(
            "tau = {tau} is not an interior multiple of the time step {}",
            market.dt()
        ));
    }
    Ok(rounded as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probability {
    pub value: f64,
    pub standard_error: f64,
}

impl Probability {
    fn from_count(count: u64, total: u64) -> Self {
        let p = count as f64 / total as f64;
        Self {
            value: p,
            standard_error: (p * (1.0 - p) / total as f64).sqrt(),
        }
    }
}

/// Probability that `S_T > K + ε`.
pub fn expiry_threshold_probability(
    market: &MarketConfig,
    precision: Precision,
    epsilon: f64,
    num_paths: u64,
    rng: RngMode,
) -> Result<Probability> {
    let config = EmulationConfig::new(*market, precision, num_paths, rng)
        .with_payoff(Payoff::ExceedsThreshold { epsilon });
    let result = simulate(&config)?;
    let hits = (result.mean_payoff * num_paths as f64).round() as u64;
    Ok(Probability::from_count(hits, num_paths))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedRiskResult {
    pub probability: Probability,
    /// Discounted portfolio value at `tau` per outer path, in index order.
    pub values: Vec<f64>,
}

impl NestedRiskResult {
    pub fn csv(&self) -> String {
        let mut out = String::from("outer_index,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v:.17e}\n"));
        }
        out
    }
}

/// Portfolio value at `tau` from the inner-path payoffs, as the digital
/// register would hold it: in rounded mode the inner mean is snapped to the
/// payoff grid before discounting.
fn portfolio_value(stepper: &PathStepper, market: &MarketConfig, tau: f64, code_sum: u64, payoff_sum: f64, inner: u64) -> Result<f64> {
    let discount = (-market.rate * (market.total_time - tau)).exp();
    let mean = match &stepper.codecs {
        Some(c) => c.payoff.round(c.payoff.mean_of_codes(code_sum, inner))?,
        None => payoff_sum / inner as f64,
    };
    Ok(discount * mean)
}

/// Nested Monte-Carlo: each outer path runs to `tau`, then `inner_paths`
/// continuations (lanes `1..=inner_paths`) value the call at `tau`. Returns
/// the fraction of outer paths whose value is below `epsilon`.
pub fn nested_risk_probability(
    market: &MarketConfig,
    precision: Precision,
    spec: &RiskSpec,
    rng: RngMode,
) -> Result<NestedRiskResult> {
    market.validate()?;
    spec.validate(market)?;
    let split = tau_steps(market, spec.tau)?;
    let stepper = PathStepper::new(*market, precision);
    let values: Vec<f64> = (0..spec.outer_paths)
        .into_par_iter()
        .map(|i| {
            let mut outer = stepper.initial()?;
            stepper.advance(&mut outer, &mut rng.path_source(i, 0), 0..split)?;
            let mut code_sum = 0;
            let mut payoff_sum = 0.0;
            for j in 0..spec.inner_paths {
                let mut inner = outer;
                stepper.advance(&mut inner, &mut rng.path_source(i, j + 1), split..market.steps)?;
                let (payoff, code) = stepper.call_payoff(inner.price, &mut inner.clamps)?;
                code_sum += code.unwrap_or(0);
                payoff_sum += payoff;
            }
            portfolio_value(&stepper, market, spec.tau, code_sum, payoff_sum, spec.inner_paths)
        })
        .collect::<Result<_>>()?;
    let below = values.iter().filter(|&&v| v < spec.epsilon).count() as u64;
    Ok(NestedRiskResult {
        probability: Probability::from_count(below, spec.outer_paths),
        values,
    })
}

#[derive(Debug, Clone)]
pub struct QuantumNestedResult {
    /// Ancilla-|1⟩ probability of the final state.
    pub probability: f64,
    /// Discounted value decoded from the risk-value register per outer index.
    pub values: Vec<f64>,
    pub state: QState,
}

/// Spread every branch uniformly over the secondary index register.
fn branch_secondary(state: &QState) -> QState {
    let basis = *state.basis();
    let inner = 1u64 << state.layout().secondary_index_bits.unwrap_or(0);
    let scale = 1.0 / (inner as f64).sqrt();
    let mut amplitudes = BTreeMap::new();
    for (&key, &amp) in state.amplitudes() {
        for j in 0..inner {
            amplitudes.insert(basis.set(key, Register::SecondaryIndex, j), amp * scale);
        }
    }
    state.with_amplitudes(amplitudes)
}

/// Undo an ancilla rotation whose |1⟩ fraction was `fraction(key)`.
fn decode_from_ancilla(state: &QState, fraction: impl Fn(u128) -> Result<f64>) -> Result<QState> {
    let basis = *state.basis();
    let mut amplitudes: BTreeMap<u128, Complex64> = BTreeMap::new();
    for (&key, &amp) in state.amplitudes() {
        let base = basis.set(key, Register::Ancilla, 0);
        let p = fraction(base)?;
        let weight = if basis.get(key, Register::Ancilla) == 1 {
            p.sqrt()
        } else {
            (1.0 - p).sqrt()
        };
        *amplitudes.entry(base).or_default() += amp * weight;
    }
    amplitudes.retain(|_, a| a.norm_sqr() > 1e-30);
    Ok(state.with_amplitudes(amplitudes))
}

/// Path-parallel nested valuation on the statevector.
///
/// Outer segment on `|i⟩`, branching over `|j⟩` at `tau`, inner segment keyed
/// by `(i, j)`, then payoff, ancilla encoding of each normalised payoff
/// (QDAC1), a digital write of each outer path's mean payoff (QADC), the
/// threshold flag (RF), and a final ancilla encoding of the flag.
///
/// QADC has no gate construction here: the simulator reads the conditional
/// ancilla probability of each outer index and snaps it to the nearest
/// integer sum of payoff codes. The value written is therefore exactly the
/// grid mean a classical register would hold.
pub fn quantum_nested_pipeline(circuit: &McqpCircuit, tau: f64, epsilon: f64) -> Result<QuantumNestedResult> {
    let layout = circuit.layout;
    let market = circuit.market;
    let (Some(secondary_bits), Some(value_bits)) = (layout.secondary_index_bits, layout.risk_value_bits) else {
        return domain("nested valuation needs a secondary index register");
    };
    if layout.index_bits > 5 || secondary_bits > 5 {
        return Err(McqpError::Resource(
            "nested statevector valuation is limited to 5 qubits per index register".into(),
        ));
    }
    if value_bits != layout.payoff_bits {
        return domain("risk value register must match the payoff register width");
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return domain(format!("epsilon must be finite and non-negative, got {epsilon}"));
    }
    let split = tau_steps(&market, tau)?;
    let payoff_codec = circuit.codecs.payoff;
    let payoff_max = circuit.payoff_max();
    let inner = 1u64 << secondary_bits;

    let mut state = circuit.init_state()?;
    for step in 0..split {
        state = circuit.apply_step(&state, step, Keying::Primary)?;
    }
    state = branch_secondary(&state);
    for step in split..market.steps {
        state = circuit.apply_step(&state, step, Keying::Secondary)?;
    }
    state = circuit.apply_p(&state)?;

    // QDAC1
    let basis = *state.basis();
    let payoff_fraction = |key: u128| {
        normalized(payoff_codec.decode_unchecked(basis.get(key, Register::Payoff)), payoff_max)
    };
    state = encode_on_ancilla(&state, "QDAC1", payoff_fraction)?;

    // QADC: conditional ancilla probability per outer index
    let mut weight = BTreeMap::<u64, (f64, f64)>::new();
    for (&key, amp) in state.amplitudes() {
        let entry = weight.entry(basis.get(key, Register::Index)).or_default();
        entry.0 += amp.norm_sqr();
        if basis.get(key, Register::Ancilla) == 1 {
            entry.1 += amp.norm_sqr();
        }
    }
    let mut value_codes = BTreeMap::new();
    for (&i, &(total, good)) in &weight {
        let code_sum = (good / total * (inner * payoff_codec.max_code()) as f64).round() as u64;
        let mean = payoff_codec.mean_of_codes(code_sum, inner);
        value_codes.insert(i, payoff_codec.encode(mean)?);
    }
    let written = state.permute("QADC", |key| {
        let code = value_codes[&basis.get(key, Register::Index)];
        Ok((basis.set(key, Register::RiskValue, code), false))
    })?;
    // uncompute QDAC1 so the ancilla is free for the final encoding
    state = decode_from_ancilla(&written, payoff_fraction)?;

    // RF
    let discount = (-market.rate * (market.total_time - tau)).exp();
    let value_of = |code: u64| discount * payoff_codec.decode_unchecked(code);
    state = state.permute("RF", |key| {
        let below = value_of(basis.get(key, Register::RiskValue)) < epsilon;
        Ok((basis.set(key, Register::RiskFlag, below as u64), false))
    })?;
    state = encode_on_ancilla(&state, "risk encoding", |key| Ok(basis.get(key, Register::RiskFlag) as f64))?;

    Ok(QuantumNestedResult {
        probability: state.ancilla_one_probability(),
        values: value_codes.values().map(|&c| value_of(c)).collect(),
        state,
    })
}

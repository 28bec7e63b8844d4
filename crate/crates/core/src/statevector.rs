//! Sparse statevector simulation of the path-parallel pricing circuit.
//!
//! A basis state is the concatenation of all register codes, packed into a
//! `u128`. Every operator except the mean encoding is a rewrite of basis
//! states that leaves amplitudes untouched, so the support never exceeds one
//! basis state per index value until the ancilla splits each branch in two.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::chaosrng::{sample_keyed, Dim, SamplerConfig};
use crate::error::{domain, McqpError, Result};
use crate::fixedpoint::{FixedPointCodec, RegisterLayout};
use crate::market::{CodecSet, MarketConfig};

/// Largest index register the simulator will expand.
pub const MAX_SIMULATED_INDEX_BITS: u32 = 20;

/// Registers materialised in a basis state.
///
/// The time-step register is only accounted for in
/// [`layout_width`](crate::fixedpoint::layout_width); the step is passed to
/// the random-number operator as a classical parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Register {
    Index,
    SecondaryIndex,
    Variable,
    VolVariable,
    Price,
    Vol,
    Payoff,
    RiskValue,
    RiskFlag,
    Ancilla,
}

impl Register {
    const ALL: [Register; 10] = [
        Register::Index,
        Register::SecondaryIndex,
        Register::Variable,
        Register::VolVariable,
        Register::Price,
        Register::Vol,
        Register::Payoff,
        Register::RiskValue,
        Register::RiskFlag,
        Register::Ancilla,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Register::Index => "index",
            Register::SecondaryIndex => "secondary_index",
            Register::Variable => "variable",
            Register::VolVariable => "vol_variable",
            Register::Price => "price",
            Register::Vol => "vol",
            Register::Payoff => "payoff",
            Register::RiskValue => "risk_value",
            Register::RiskFlag => "risk_flag",
            Register::Ancilla => "ancilla",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    offset: u32,
    width: u32,
}

/// Bit offsets of each register inside a packed basis key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisLayout {
    slots: [Option<Slot>; 10],
    width: u32,
}

impl BasisLayout {
    pub fn new(layout: &RegisterLayout) -> Result<Self> {
        layout.validate()?;
        let widths = [
            Some(layout.index_bits),
            layout.secondary_index_bits,
            Some(layout.variable_bits),
            layout.vol_variable_bits,
            Some(layout.price_bits),
            layout.vol_bits,
            Some(layout.payoff_bits),
            layout.risk_value_bits,
            layout.risk_value_bits.map(|_| 1),
            Some(1),
        ];
        let mut slots = [None; 10];
        let mut offset = 0u32;
        for (slot, width) in slots.iter_mut().zip(widths) {
            if let Some(width) = width {
                *slot = Some(Slot { offset, width });
                offset += width;
            }
        }
        if offset > 128 {
            return Err(McqpError::Resource(format!(
                "{offset} materialised qubits exceed the 128-bit basis key"
            )));
        }
        Ok(Self {
            slots,
            width: offset,
        })
    }

    /// Qubits stored in a basis key.
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn has(&self, register: Register) -> bool {
        self.slots[register.slot()].is_some()
    }

    fn slot(&self, register: Register) -> Slot {
        self.slots[register.slot()]
            .unwrap_or_else(|| panic!("register {} not in layout", register.name()))
    }

    pub fn get(&self, key: u128, register: Register) -> u64 {
        let slot = self.slot(register);
        ((key >> slot.offset) & ((1u128 << slot.width) - 1)) as u64
    }

    pub fn set(&self, key: u128, register: Register, value: u64) -> u128 {
        let slot = self.slot(register);
        let mask = ((1u128 << slot.width) - 1) << slot.offset;
        debug_assert!((value as u128) < (1u128 << slot.width));
        (key & !mask) | ((value as u128) << slot.offset)
    }
}

/// Sparse quantum state over composite register basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct QState {
    layout: RegisterLayout,
    basis: BasisLayout,
    amplitudes: BTreeMap<u128, Complex64>,
    clamp_count: u64,
    warnings: Vec<String>,
}

impl QState {
    pub fn from_amplitudes(
        layout: RegisterLayout,
        amplitudes: BTreeMap<u128, Complex64>,
    ) -> Result<Self> {
        Ok(Self {
            basis: BasisLayout::new(&layout)?,
            layout,
            amplitudes,
            clamp_count: 0,
            warnings: Vec::new(),
        })
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn basis(&self) -> &BasisLayout {
        &self.basis
    }

    pub fn amplitudes(&self) -> &BTreeMap<u128, Complex64> {
        &self.amplitudes
    }

    pub fn support_size(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    /// Register writes that hit a codec bound so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn get(&self, key: u128, register: Register) -> u64 {
        self.basis.get(key, register)
    }

    /// Probability of measuring the ancilla in |1⟩.
    pub fn ancilla_one_probability(&self) -> f64 {
        self.probability_where(|key| self.basis.get(key, Register::Ancilla) == 1)
    }

    pub fn probability_where(&self, predicate: impl Fn(u128) -> bool) -> f64 {
        self.amplitudes
            .iter()
            .filter(|(&k, _)| predicate(k))
            // fold from +0.0: an empty f64 sum is -0.0
            .fold(0.0, |acc, (_, a)| acc + a.norm_sqr())
            .clamp(0.0, 1.0)
    }

    /// Same registers and diagnostics with new amplitudes.
    pub fn with_amplitudes(&self, amplitudes: BTreeMap<u128, Complex64>) -> QState {
        QState {
            amplitudes,
            ..self.clone()
        }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &QState) -> Complex64 {
        self.amplitudes
            .iter()
            .filter_map(|(k, a)| other.amplitudes.get(k).map(|b| a.conj() * b))
            .sum()
    }

    /// `alpha·self + beta·other`, dropping exact zeros.
    pub fn combine(&self, alpha: Complex64, other: &QState, beta: Complex64) -> QState {
        let mut amplitudes = BTreeMap::new();
        for (&k, &a) in &self.amplitudes {
            amplitudes.insert(k, alpha * a);
        }
        for (&k, &b) in &other.amplitudes {
            *amplitudes.entry(k).or_insert(Complex64::new(0.0, 0.0)) += beta * b;
        }
        amplitudes.retain(|_, a| a.norm_sqr() != 0.0);
        QState {
            amplitudes,
            ..self.clone()
        }
    }

    /// Multiply the amplitude of every basis state matching `predicate` by
    /// `factor`.
    pub fn phase_where(&self, predicate: impl Fn(u128) -> bool, factor: Complex64) -> QState {
        let amplitudes = self
            .amplitudes
            .iter()
            .map(|(&k, &a)| (k, if predicate(k) { factor * a } else { a }))
            .collect();
        QState {
            amplitudes,
            ..self.clone()
        }
    }

    /// Apply a basis-state rewrite in parallel; fails if two basis states of
    /// the support map to the same image.
    pub fn permute<F>(&self, operator: &str, rewrite: F) -> Result<QState>
    where
        F: Fn(u128) -> Result<(u128, bool)> + Sync,
    {
        let images: Vec<(u128, Complex64, bool)> = self
            .amplitudes
            .par_iter()
            .map(|(&k, &a)| rewrite(k).map(|(image, clamped)| (image, a, clamped)))
            .collect::<Result<_>>()?;
        let mut amplitudes = BTreeMap::new();
        let mut clamps = 0;
        for (image, a, clamped) in images {
            clamps += clamped as u64;
            if amplitudes.insert(image, a).is_some() {
                return Err(McqpError::ContractViolation(format!(
                    "{operator} is not injective on the support"
                )));
            }
        }
        Ok(QState {
            amplitudes,
            clamp_count: self.clamp_count + clamps,
            ..self.clone()
        })
    }

    /// CSV dump, one row per basis state in canonical key order.
    pub fn to_csv(&self, codecs: &CodecSet) -> String {
        let registers: Vec<(Register, Option<FixedPointCodec>)> = Register::ALL
            .iter()
            .filter(|r| self.basis.has(**r))
            .map(|&r| {
                let codec = match r {
                    Register::Variable => Some(codecs.variable),
                    Register::Price => Some(codecs.price),
                    Register::Payoff | Register::RiskValue => Some(codecs.payoff),
                    Register::Vol => codecs.vol,
                    Register::VolVariable => codecs.vol_variable,
                    _ => None,
                };
                (r, codec)
            })
            .collect();
        let mut out = String::from("index_bits");
        for (r, codec) in &registers {
            match codec {
                Some(_) => write!(out, ",{0}_hex,{0}", r.name()).unwrap(),
                None => write!(out, ",{}", r.name()).unwrap(),
            }
        }
        out.push_str(",amp_re,amp_im\n");
        let index_width = self.layout.index_bits as usize;
        for (&key, amp) in &self.amplitudes {
            let index = self.basis.get(key, Register::Index);
            write!(out, "{index:0index_width$b}").unwrap();
            for (r, codec) in &registers {
                let code = self.basis.get(key, *r);
                match codec {
                    Some(c) => write!(out, ",{code:x},{:.17e}", c.decode_unchecked(code)).unwrap(),
                    None => write!(out, ",{code}").unwrap(),
                }
            }
            writeln!(out, ",{:.17e},{:.17e}", amp.re, amp.im).unwrap();
        }
        out
    }
}

/// Which lane keys the random draws of a branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keying {
    /// Draws depend on the index register only.
    Primary,
    /// Draws depend on the index and the secondary index `j` (lane `j + 1`).
    Secondary,
}

/// The pricing circuit: register layout, market, codecs and sampler.
#[derive(Debug, Clone)]
pub struct McqpCircuit {
    pub layout: RegisterLayout,
    pub market: MarketConfig,
    pub codecs: CodecSet,
    pub sampler: SamplerConfig,
}

impl McqpCircuit {
    pub fn new(layout: RegisterLayout, market: MarketConfig) -> Result<Self> {
        let codecs = CodecSet::defaults(&market, &layout)?;
        Self::with_codecs(layout, market, codecs, SamplerConfig::default())
    }

    pub fn with_codecs(
        layout: RegisterLayout,
        market: MarketConfig,
        codecs: CodecSet,
        sampler: SamplerConfig,
    ) -> Result<Self> {
        layout.validate()?;
        market.validate()?;
        sampler.validate()?;
        if layout.index_bits > MAX_SIMULATED_INDEX_BITS
            || layout.secondary_index_bits.unwrap_or(0) > MAX_SIMULATED_INDEX_BITS
        {
            return Err(McqpError::Resource(format!(
                "index registers wider than {MAX_SIMULATED_INDEX_BITS} qubits are not simulated"
            )));
        }
        if layout.is_heston() != market.heston.is_some() {
            return domain("Heston registers are required exactly when the market is Heston");
        }
        let widths = [
            (codecs.variable.bits(), layout.variable_bits, "variable"),
            (codecs.price.bits(), layout.price_bits, "price"),
            (codecs.payoff.bits(), layout.payoff_bits, "payoff"),
        ];
        for (codec_bits, register_bits, name) in widths {
            if codec_bits != register_bits {
                return domain(format!(
                    "{name} codec has {codec_bits} bits but the register has {register_bits}"
                ));
            }
        }
        if layout.is_heston()
            && (codecs.vol.map(|c| c.bits()) != layout.vol_bits
                || codecs.vol_variable.map(|c| c.bits()) != layout.vol_variable_bits)
        {
            return domain("Heston codecs must match the Heston register widths");
        }
        if layout.steps != market.steps {
            return domain(format!(
                "layout has {} steps but the market has {}",
                layout.steps, market.steps
            ));
        }
        BasisLayout::new(&layout)?;
        Ok(Self {
            layout,
            market,
            codecs,
            sampler,
        })
    }

    pub fn payoff_max(&self) -> f64 {
        self.codecs.payoff_max()
    }

    /// Uniform superposition over the index register with the initial price
    /// (and variance) loaded in every branch.
    pub fn init_state(&self) -> Result<QState> {
        let basis = BasisLayout::new(&self.layout)?;
        let paths = self.layout.num_paths();
        let amp = Complex64::new(1.0 / (paths as f64).sqrt(), 0.0);
        let price = self.codecs.price.encode_checked(self.market.s0)?;
        let mut warnings = Vec::new();
        let mut clamps = price.clamped as u64;
        if price.clamped {
            warnings.push(format!(
                "initial price {} clamped to the price register bounds",
                self.market.s0
            ));
        }
        let mut template = basis.set(0, Register::Price, price.code);
        if let (Some(h), Some(codec)) = (self.market.heston, self.codecs.vol) {
            let vol = codec.encode_checked(h.v0)?;
            clamps += vol.clamped as u64;
            if vol.clamped {
                warnings.push(format!("initial variance {} clamped", h.v0));
            }
            template = basis.set(template, Register::Vol, vol.code);
        }
        let amplitudes = (0..paths)
            .map(|i| (basis.set(template, Register::Index, i), amp))
            .collect();
        Ok(QState {
            layout: self.layout,
            basis,
            amplitudes,
            clamp_count: clamps * paths,
            warnings,
        })
    }

    fn lane(&self, state: &QState, key: u128, keying: Keying) -> u64 {
        match keying {
            Keying::Primary => 0,
            Keying::Secondary => state.get(key, Register::SecondaryIndex) + 1,
        }
    }

    /// Variable codes written by the random-number operator for one branch.
    fn variable_codes(&self, index: u64, lane: u64, step: u64) -> Result<(u64, Option<u64>, bool)> {
        let root_dt = self.market.dt().sqrt();
        let z = sample_keyed(index, step, lane, Dim::Price, &self.sampler)?;
        let w = self.codecs.variable.encode_checked(z * root_dt)?;
        match (self.market.heston, self.codecs.vol_variable) {
            (Some(h), Some(codec)) => {
                let z_var = sample_keyed(index, step, lane, Dim::Variance, &self.sampler)?;
                let correlated = h.rho * z + (1.0 - h.rho * h.rho).sqrt() * z_var;
                let wv = codec.encode_checked(correlated * root_dt)?;
                Ok((w.code, Some(wv.code), w.clamped || wv.clamped))
            }
            _ => Ok((w.code, None, w.clamped)),
        }
    }

    /// Random-number operator: writes the encoded Brownian increment of step
    /// `t` into the variable register(s) of every branch.
    pub fn apply_r(&self, state: &QState, step: u64) -> Result<QState> {
        self.apply_r_keyed(state, step, Keying::Primary)
    }

    pub fn apply_r_keyed(&self, state: &QState, step: u64, keying: Keying) -> Result<QState> {
        let basis = state.basis;
        let heston = self.layout.is_heston();
        state.permute("R", |key| {
            if basis.get(key, Register::Variable) != 0
                || (heston && basis.get(key, Register::VolVariable) != 0)
            {
                return Err(McqpError::ContractViolation(
                    "R requires an all-zero variable register".into(),
                ));
            }
            let index = basis.get(key, Register::Index);
            let (w, wv, clamped) = self.variable_codes(index, self.lane(state, key, keying), step)?;
            let mut image = basis.set(key, Register::Variable, w);
            if let Some(wv) = wv {
                image = basis.set(image, Register::VolVariable, wv);
            }
            Ok((image, clamped))
        })
    }

    /// Inverse random-number operator: uncomputes the variable register(s).
    pub fn apply_r_inv(&self, state: &QState, step: u64) -> Result<QState> {
        self.apply_r_inv_keyed(state, step, Keying::Primary)
    }

    pub fn apply_r_inv_keyed(&self, state: &QState, step: u64, keying: Keying) -> Result<QState> {
        let basis = state.basis;
        let heston = self.layout.is_heston();
        let uncomputed = state.permute("R⁻¹", |key| {
            let index = basis.get(key, Register::Index);
            let (w, wv, _) = self.variable_codes(index, self.lane(state, key, keying), step)?;
            let matches = basis.get(key, Register::Variable) == w
                && wv.is_none_or(|wv| basis.get(key, Register::VolVariable) == wv);
            if !matches {
                return Err(McqpError::ContractViolation(format!(
                    "R⁻¹ at step {step} does not match the variable register"
                )));
            }
            let mut image = basis.set(key, Register::Variable, 0);
            if heston {
                image = basis.set(image, Register::VolVariable, 0);
            }
            Ok((image, false))
        })?;
        // uncomputation never clamps; keep the count of the forward pass only
        Ok(QState {
            clamp_count: state.clamp_count,
            ..uncomputed
        })
    }

    /// Time-step operator: `S ← S·(1 + μΔt + σ·ΔW)` on the grid. Heston uses
    /// `σ = √ν` from the variance register.
    pub fn apply_t(&self, state: &QState) -> Result<QState> {
        let basis = state.basis;
        let dt = self.market.dt();
        let mu = self.market.mu;
        let vol_codec = self.codecs.vol;
        state.permute("T", |key| {
            let price = self.codecs.price.decode_unchecked(basis.get(key, Register::Price));
            let w = self.codecs.variable.decode_unchecked(basis.get(key, Register::Variable));
            let sigma = match vol_codec {
                Some(codec) => codec.decode_unchecked(basis.get(key, Register::Vol)).sqrt(),
                None => self.market.sigma,
            };
            let next = self.codecs.price.encode_checked(price * (1.0 + mu * dt + sigma * w))?;
            Ok((basis.set(key, Register::Price, next.code), next.clamped))
        })
    }

    /// Variance operator with full truncation:
    /// `ν ← max(0, ν + κ(θ − ν)Δt + ξ√ν·ΔW^ν)`.
    pub fn apply_v(&self, state: &QState) -> Result<QState> {
        let (Some(h), Some(vol), Some(vol_variable)) =
            (self.market.heston, self.codecs.vol, self.codecs.vol_variable)
        else {
            return domain("V applies to Heston circuits only");
        };
        let basis = state.basis;
        let dt = self.market.dt();
        state.permute("V", |key| {
            let nu = vol.decode_unchecked(basis.get(key, Register::Vol));
            let wv = vol_variable.decode_unchecked(basis.get(key, Register::VolVariable));
            let next = (nu + h.kappa * (h.theta - nu) * dt + h.xi * nu.sqrt() * wv).max(0.0);
            let code = vol.encode_checked(next)?;
            Ok((basis.set(key, Register::Vol, code.code), code.clamped))
        })
    }

    /// Payoff operator: `P ← max(S − K, 0)`.
    pub fn apply_p(&self, state: &QState) -> Result<QState> {
        let basis = state.basis;
        let strike = self.market.strike;
        state.permute("P", |key| {
            if basis.get(key, Register::Payoff) != 0 {
                return Err(McqpError::ContractViolation(
                    "P requires an all-zero payoff register".into(),
                ));
            }
            let price = self.codecs.price.decode_unchecked(basis.get(key, Register::Price));
            let payoff = self.codecs.payoff.encode_checked((price - strike).max(0.0))?;
            Ok((basis.set(key, Register::Payoff, payoff.code), payoff.clamped))
        })
    }

    /// Mean-encoding operator: each branch splits into ancilla |0⟩ with
    /// amplitude `a·√(1−p̂)` and |1⟩ with `a·√p̂`, where `p̂ = P / payoff_max`.
    pub fn apply_m(&self, state: &QState, payoff_max: f64) -> Result<QState> {
        let codec = self.codecs.payoff;
        encode_on_ancilla(state, "M", |key| {
            let payoff = codec.decode_unchecked(state.get(key, Register::Payoff));
            normalized(payoff, payoff_max)
        })
    }

    /// One time step of the per-step operator block.
    pub fn apply_step(&self, state: &QState, step: u64, keying: Keying) -> Result<QState> {
        let drawn = self.apply_r_keyed(state, step, keying)?;
        let evolved = if self.layout.is_heston() {
            self.apply_t(&self.apply_v(&drawn)?)?
        } else {
            self.apply_t(&drawn)?
        };
        self.apply_r_inv_keyed(&evolved, step, keying)
    }

    /// Evolve through all time steps and apply the payoff, without the mean
    /// encoding.
    pub fn evolve_to_payoff(&self) -> Result<QState> {
        let mut state = self.init_state()?;
        for step in 0..self.market.steps {
            state = self.apply_step(&state, step, Keying::Primary)?;
        }
        self.apply_p(&state)
    }

    /// Full pipeline `M·P·(R⁻¹·T·R)^m` (Heston: `M·P·(R⁻¹·T·V·R)^m`).
    pub fn run(&self) -> Result<QState> {
        let payoffs = self.evolve_to_payoff()?;
        self.apply_m(&payoffs, self.payoff_max())
    }

    /// Undiscounted mean payoff read from the ancilla.
    pub fn mean_payoff(&self, state: &QState) -> f64 {
        state.ancilla_one_probability() * self.payoff_max()
    }

    /// Discounted option value read from the ancilla.
    pub fn option_price(&self, state: &QState) -> f64 {
        self.mean_payoff(state) * self.market.discount()
    }
}

pub(crate) fn normalized(value: f64, max: f64) -> Result<f64> {
    if !(max > 0.0) {
        return Err(McqpError::ContractViolation(format!(
            "normalisation constant must be positive, got {max}"
        )));
    }
    let p = value / max;
    if !(0.0..=1.0).contains(&p) {
        return Err(McqpError::ContractViolation(format!(
            "normalised value {p} outside [0, 1]"
        )));
    }
    Ok(p)
}

/// Rotate the ancilla of every |0⟩-ancilla branch so that its |1⟩ weight is
/// the branch weight times `fraction(key)`.
pub(crate) fn encode_on_ancilla<F>(state: &QState, operator: &str, fraction: F) -> Result<QState>
where
    F: Fn(u128) -> Result<f64>,
{
    let basis = state.basis;
    let mut amplitudes = BTreeMap::new();
    for (&key, &amp) in &state.amplitudes {
        if basis.get(key, Register::Ancilla) != 0 {
            return Err(McqpError::ContractViolation(format!(
                "{operator} requires the ancilla in |0⟩"
            )));
        }
        let p = fraction(key)?;
        let zero = amp * (1.0 - p).sqrt();
        let one = amp * p.sqrt();
        if zero.norm_sqr() != 0.0 {
            amplitudes.insert(key, zero);
        }
        if one.norm_sqr() != 0.0 {
            amplitudes.insert(basis.set(key, Register::Ancilla, 1), one);
        }
    }
    Ok(QState {
        amplitudes,
        ..state.clone()
    })
}

/// Run the pipeline with default codecs and sampler.
pub fn run_pipeline(layout: RegisterLayout, market: MarketConfig) -> Result<QState> {
    McqpCircuit::new(layout, market)?.run()
}

//! Path-by-path classical emulation of the circuit arithmetic.
//!
//! Every register store is rounded to its codec grid exactly as the
//! statevector operators do, so for small registers the emulator reproduces
//! the pipeline's payoff codes bit for bit. An unrounded mode keeps full
//! `f64` precision for convergence studies.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaosrng::{Dim, PathSource, RngMode};
use crate::error::{domain, McqpError, Result};
use crate::fixedpoint::FixedPointCodec;
use crate::market::{CodecSet, MarketConfig};

/// Paths per reduction chunk.
pub const CHUNK_PATHS: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Precision {
    /// Round every store to the given codecs.
    Rounded(CodecSet),
    /// Keep full `f64` precision.
    Unrounded,
}

/// What is averaged over the terminal prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Payoff {
    /// European call `max(S_T − K, 0)`, rounded to the payoff codec.
    Call,
    /// Indicator `S_T > K + ε`.
    ExceedsThreshold { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmulationConfig {
    pub market: MarketConfig,
    pub precision: Precision,
    pub num_paths: u64,
    pub rng: RngMode,
    pub payoff: Payoff,
    /// Keep every per-path payoff in the result.
    pub keep_payoffs: bool,
    /// Index of the first path; paths are `first_path..first_path + num_paths`.
    pub first_path: u64,
}

impl EmulationConfig {
    pub fn new(market: MarketConfig, precision: Precision, num_paths: u64, rng: RngMode) -> Self {
        Self {
            market,
            precision,
            num_paths,
            rng,
            payoff: Payoff::Call,
            keep_payoffs: false,
            first_path: 0,
        }
    }

    pub fn with_first_path(mut self, first_path: u64) -> Self {
        self.first_path = first_path;
        self
    }

    pub fn with_payoff(mut self, payoff: Payoff) -> Self {
        self.payoff = payoff;
        self
    }

    pub fn keeping_payoffs(mut self) -> Self {
        self.keep_payoffs = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.rng.sampler().validate()?;
        if self.num_paths == 0 {
            return domain("num_paths must be at least 1");
        }
        if self.first_path.checked_add(self.num_paths).is_none() {
            return domain("path index range overflows");
        }
        if let Precision::Rounded(codecs) = &self.precision {
            if self.market.heston.is_some() && (codecs.vol.is_none() || codecs.vol_variable.is_none())
            {
                return domain("rounded Heston emulation needs variance codecs");
            }
        }
        if let Payoff::ExceedsThreshold { epsilon } = self.payoff {
            if !(epsilon >= 0.0 && epsilon.is_finite()) {
                return domain(format!("threshold must be finite and non-negative, got {epsilon}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub num_paths: u64,
    pub mean_payoff: f64,
    /// Sample standard deviation of the per-path payoffs.
    pub std_payoff: f64,
    /// Stores that hit a codec bound, over all paths.
    pub clamp_count: u64,
    /// Sum of payoff codes in rounded call mode.
    pub payoff_code_sum: Option<u64>,
    /// Per-path payoffs in index order when requested.
    pub payoffs: Option<Vec<f64>>,
}

impl PathResult {
    pub fn standard_error(&self) -> f64 {
        self.std_payoff / (self.num_paths as f64).sqrt()
    }
}

/// Price (and variance) of one path between steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub price: f64,
    pub variance: Option<f64>,
    pub clamps: u64,
}

/// One store through an optional codec.
fn store(codec: Option<&FixedPointCodec>, value: f64, clamps: &mut u64) -> Result<f64> {
    match codec {
        Some(c) => {
            let encoded = c.encode_checked(value)?;
            *clamps += encoded.clamped as u64;
            Ok(c.decode_unchecked(encoded.code))
        }
        None if value.is_finite() => Ok(value),
        None => domain(format!("path value became non-finite: {value}")),
    }
}

/// Single-path arithmetic shared by the emulator and the nested risk valuer.
#[derive(Debug, Clone, Copy)]
pub struct PathStepper {
    pub market: MarketConfig,
    pub codecs: Option<CodecSet>,
}

impl PathStepper {
    pub fn new(market: MarketConfig, precision: Precision) -> Self {
        let codecs = match precision {
            Precision::Rounded(c) => Some(c),
            Precision::Unrounded => None,
        };
        Self { market, codecs }
    }

    pub fn initial(&self) -> Result<PathState> {
        let mut clamps = 0;
        let price = store(self.codecs.as_ref().map(|c| &c.price), self.market.s0, &mut clamps)?;
        let variance = match self.market.heston {
            Some(h) => Some(store(self.codecs.as_ref().and_then(|c| c.vol.as_ref()), h.v0, &mut clamps)?),
            None => None,
        };
        Ok(PathState {
            price,
            variance,
            clamps,
        })
    }

    /// Advance through `steps`, drawing from `source` in (price, variance)
    /// order each step. Heston updates the variance first and diffuses the
    /// price with the updated `√ν`.
    pub fn advance(&self, state: &mut PathState, source: &mut PathSource, steps: Range<u64>) -> Result<()> {
        let dt = self.market.dt();
        let root_dt = dt.sqrt();
        let codecs = self.codecs.as_ref();
        for t in steps {
            let z = source.standard(t, Dim::Price)?;
            let w = store(codecs.map(|c| &c.variable), z * root_dt, &mut state.clamps)?;
            let sigma = match (self.market.heston, state.variance) {
                (Some(h), Some(nu)) => {
                    let z_var = source.standard(t, Dim::Variance)?;
                    let correlated = h.rho * z + (1.0 - h.rho * h.rho).sqrt() * z_var;
                    let wv = store(
                        codecs.and_then(|c| c.vol_variable.as_ref()),
                        correlated * root_dt,
                        &mut state.clamps,
                    )?;
                    let next = (nu + h.kappa * (h.theta - nu) * dt + h.xi * nu.sqrt() * wv).max(0.0);
                    let nu = store(codecs.and_then(|c| c.vol.as_ref()), next, &mut state.clamps)?;
                    state.variance = Some(nu);
                    nu.sqrt()
                }
                _ => self.market.sigma,
            };
            let next = state.price * (1.0 + self.market.mu * dt + sigma * w);
            state.price = store(codecs.map(|c| &c.price), next, &mut state.clamps)?;
        }
        Ok(())
    }

    /// Rounded call payoff and its code (rounded mode only).
    pub fn call_payoff(&self, price: f64, clamps: &mut u64) -> Result<(f64, Option<u64>)> {
        let intrinsic = (price - self.market.strike).max(0.0);
        match &self.codecs {
            Some(c) => {
                let encoded = c.payoff.encode_checked(intrinsic)?;
                *clamps += encoded.clamped as u64;
                Ok((c.payoff.decode_unchecked(encoded.code), Some(encoded.code)))
            }
            None => Ok((intrinsic, None)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    sum: f64,
    sum_sq: f64,
    clamps: u64,
    code_sum: u64,
}

impl Partial {
    fn merge(self, other: Partial) -> Partial {
        Partial {
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
            clamps: self.clamps + other.clamps,
            code_sum: self.code_sum + other.code_sum,
        }
    }
}

/// Pairwise reduction in a fixed tree shape.
fn pairwise(parts: &[Partial]) -> Partial {
    match parts.len() {
        0 => Partial::default(),
        1 => parts[0],
        n => pairwise(&parts[..n / 2]).merge(pairwise(&parts[n / 2..])),
    }
}

fn simulate_chunk(config: &EmulationConfig, stepper: &PathStepper, paths: Range<u64>) -> Result<(Partial, Vec<f64>)> {
    let mut partial = Partial::default();
    let mut kept = Vec::new();
    for i in paths {
        let mut source = config.rng.path_source(i, 0);
        let mut state = stepper.initial()?;
        stepper.advance(&mut state, &mut source, 0..config.market.steps)?;
        let payoff = match config.payoff {
            Payoff::Call => {
                let (value, code) = stepper.call_payoff(state.price, &mut state.clamps)?;
                partial.code_sum += code.unwrap_or(0);
                value
            }
            Payoff::ExceedsThreshold { epsilon } => {
                (state.price > config.market.strike + epsilon) as u8 as f64
            }
        };
        partial.sum += payoff;
        partial.sum_sq += payoff * payoff;
        partial.clamps += state.clamps;
        if config.keep_payoffs {
            kept.push(payoff);
        }
    }
    Ok((partial, kept))
}

/// Emulate all paths on the current rayon pool.
pub fn simulate(config: &EmulationConfig) -> Result<PathResult> {
    config.validate()?;
    let stepper = PathStepper::new(config.market, config.precision);
    let n = config.num_paths;
    let chunks: Vec<Range<u64>> = (0..n.div_ceil(CHUNK_PATHS))
        .map(|c| {
            let start = config.first_path + c * CHUNK_PATHS;
            start..config.first_path + ((c + 1) * CHUNK_PATHS).min(n)
        })
        .collect();
    let results: Vec<(Partial, Vec<f64>)> = chunks
        .into_par_iter()
        .map(|range| simulate_chunk(config, &stepper, range))
        .collect::<Result<_>>()?;
    let partials: Vec<Partial> = results.iter().map(|(p, _)| *p).collect();
    let total = pairwise(&partials);
    let count = n as f64;

    let rounded_call = match (&config.precision, config.payoff) {
        (Precision::Rounded(c), Payoff::Call) => Some(c.payoff),
        _ => None,
    };
    let mean_payoff = match rounded_call {
        Some(codec) => codec.mean_of_codes(total.code_sum, n),
        None => total.sum / count,
    };
    let variance = if n > 1 {
        ((total.sum_sq - total.sum * total.sum / count) / (count - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(PathResult {
        num_paths: n,
        mean_payoff,
        std_payoff: variance.sqrt(),
        clamp_count: total.clamps,
        payoff_code_sum: rounded_call.map(|_| total.code_sum),
        payoffs: config
            .keep_payoffs
            .then(|| results.into_iter().flat_map(|(_, kept)| kept).collect()),
    })
}

/// Emulate on a dedicated pool of `threads` workers.
pub fn simulate_with_threads(config: &EmulationConfig, threads: usize) -> Result<PathResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| McqpError::Resource(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| simulate(config))
}

/// Discounted option value.
pub fn price(config: &EmulationConfig) -> Result<f64> {
    Ok(simulate(config)?.mean_payoff * config.market.discount())
}

//! Deterministic random draws keyed by path index, time step and retry.
//!
//! Seeds come from a logistic map at r = 4 started at `i^(-3/2)`. Each seed
//! keys a ChaCha8 counter-based generator whose first output is the
//! acceptance threshold and whose second output is the candidate, so every
//! draw is a pure function of its key. A candidate uniform on the sampler
//! support is accepted when the standard normal density divided by the
//! normalizer exceeds the threshold; otherwise the retry counter advances and
//! a new seed is generated.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::norm_pdf;
use crate::error::{domain, McqpError, Result};

mod report;

pub use report::{distribution_report, DistributionReport, REPORT_BINS};

/// Identifies the uniform source behind every draw. Recorded in output metadata.
pub const GENERATOR_ID: &str = "chacha8/rand_chacha-0.9/seed_from_u64;stream=2*lane+dim;words=[p_act,candidate]";

/// Key of one seed evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedKey {
    pub path_index: u64,
    pub time_step: u64,
    pub retry: u32,
}

/// Logistic-map seed for a key.
///
/// `x ← i^(-3/2)`, then `x ← 4x(1−x)` `retry` times, then
/// `floor(((10⁴·x) mod 10)·10⁶ + 100·m)`.
pub fn seed(key: SeedKey) -> Result<u64> {
    if key.path_index == 0 {
        return domain("seed path index must be at least 1");
    }
    let root = (key.path_index as f64).sqrt();
    let mut x = 1.0 / (root * root * root);
    for _ in 0..key.retry {
        x = 4.0 * x * (1.0 - x);
    }
    let y = ((x * 10000.0) % 10.0) * 1_000_000.0 + key.time_step as f64 * 100.0;
    Ok(y.floor() as u64)
}

/// Stochastic dimension of a draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Price,
    Variance,
}

impl Dim {
    fn tag(self) -> u64 {
        match self {
            Dim::Price => 0,
            Dim::Variance => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub support_low: f64,
    pub support_high: f64,
    /// Divisor bringing the normal density below one on the support.
    pub density_normalizer: f64,
    /// Acceptance is about 0.278 per attempt on the default support, so 256
    /// attempts leave an exhaustion probability near 1e-36 per draw.
    pub max_retries: u32,
    /// Shift external path indices by two before seeding so that index 0 is
    /// valid and index 1 does not hit the logistic map's fixed point.
    pub remap_indices: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            support_low: -4.5,
            support_high: 4.5,
            density_normalizer: 0.4,
            max_retries: 256,
            remap_indices: true,
        }
    }
}

impl SamplerConfig {
    /// Seeds taken directly from the external path index.
    pub fn paper_faithful() -> Self {
        Self {
            remap_indices: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.support_low < self.support_high) {
            return domain("sampler support must satisfy low < high");
        }
        let peak = if self.support_low <= 0.0 && self.support_high >= 0.0 {
            norm_pdf(0.0)
        } else {
            norm_pdf(self.support_low).max(norm_pdf(self.support_high))
        };
        if self.density_normalizer < peak {
            return domain(format!(
                "density normalizer {} is below the density peak {peak} on the support",
                self.density_normalizer
            ));
        }
        if self.max_retries == 0 {
            return domain("max_retries must be positive");
        }
        Ok(())
    }

    fn seed_index(&self, path_index: u64) -> Result<u64> {
        if self.remap_indices {
            Ok(path_index + 2)
        } else if path_index == 0 {
            domain("path index 0 is invalid without index remapping")
        } else {
            Ok(path_index)
        }
    }

    fn accepts(&self, threshold: f64, candidate: f64) -> bool {
        norm_pdf(candidate) / self.density_normalizer > threshold
    }

    fn candidate(&self, word: u64) -> f64 {
        self.support_low + (self.support_high - self.support_low) * unit_interval(word)
    }
}

/// Top 53 bits of a word as a uniform value in `[0, 1)`.
fn unit_interval(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Truncated standard normal draw for path `i` at step `m`, in the price
/// dimension of lane 0.
pub fn sample_standard(path_index: u64, time_step: u64, config: &SamplerConfig) -> Result<f64> {
    sample_keyed(path_index, time_step, 0, Dim::Price, config)
}

/// Truncated standard normal draw keyed additionally by lane and dimension.
///
/// Lane 0 is the primary path; nested inner paths use lane `j + 1`.
pub fn sample_keyed(
    path_index: u64,
    time_step: u64,
    lane: u64,
    dim: Dim,
    config: &SamplerConfig,
) -> Result<f64> {
    let seed_index = config.seed_index(path_index)?;
    let stream = 2 * lane + dim.tag();
    for retry in 0..config.max_retries {
        let value = seed(SeedKey {
            path_index: seed_index,
            time_step,
            retry,
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(value);
        rng.set_stream(stream);
        let threshold = unit_interval(rng.next_u64());
        let candidate = config.candidate(rng.next_u64());
        if config.accepts(threshold, candidate) {
            return Ok(candidate);
        }
    }
    Err(McqpError::RetriesExhausted {
        path_index,
        time_step,
        max_retries: config.max_retries,
    })
}

/// Brownian increment `z·√dt` for path `i` at step `t`.
pub fn delta_w(path_index: u64, time_step: u64, dt: f64, config: &SamplerConfig) -> Result<f64> {
    if !(dt > 0.0) {
        return domain(format!("time step length must be positive, got {dt}"));
    }
    Ok(sample_standard(path_index, time_step, config)? * dt.sqrt())
}

/// Source of standard draws for the emulator and circuit operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RngMode {
    /// Logistic-map seeded draws; a pure function of (path, step, lane, dim).
    Chaos(SamplerConfig),
    /// One ChaCha8 stream per (seed, lane, path), consumed sequentially with
    /// the same acceptance rule. Much cheaper per draw than [`RngMode::Chaos`].
    Reference { seed: u64, sampler: SamplerConfig },
}

impl Default for RngMode {
    fn default() -> Self {
        RngMode::Chaos(SamplerConfig::default())
    }
}

impl RngMode {
    pub fn sampler(&self) -> &SamplerConfig {
        match self {
            RngMode::Chaos(s) => s,
            RngMode::Reference { sampler, .. } => sampler,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RngMode::Chaos(_) => "chaos",
            RngMode::Reference { .. } => "reference",
        }
    }

    /// Draw source for one path on one lane.
    pub fn path_source(&self, path_index: u64, lane: u64) -> PathSource {
        match *self {
            RngMode::Chaos(sampler) => PathSource::Chaos {
                sampler,
                path_index,
                lane,
            },
            RngMode::Reference { seed, sampler } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, lane));
                rng.set_stream(path_index);
                PathSource::Reference {
                    sampler,
                    rng: Box::new(rng),
                    path_index,
                }
            }
        }
    }
}

/// SplitMix64 finalizer over a pair, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub enum PathSource {
    Chaos {
        sampler: SamplerConfig,
        path_index: u64,
        lane: u64,
    },
    Reference {
        sampler: SamplerConfig,
        rng: Box<ChaCha8Rng>,
        path_index: u64,
    },
}

impl PathSource {
    /// Standard draw for step `t`. Reference sources ignore `t` and `dim` and
    /// return the next accepted value of their stream, so callers must draw
    /// in a fixed order.
    pub fn standard(&mut self, time_step: u64, dim: Dim) -> Result<f64> {
        match self {
            PathSource::Chaos {
                sampler,
                path_index,
                lane,
            } => sample_keyed(*path_index, time_step, *lane, dim, sampler),
            PathSource::Reference {
                sampler,
                rng,
                path_index,
            } => {
                for _ in 0..sampler.max_retries {
                    let threshold = unit_interval(rng.next_u64());
                    let candidate = sampler.candidate(rng.next_u64());
                    if sampler.accepts(threshold, candidate) {
                        return Ok(candidate);
                    }
                }
                Err(McqpError::RetriesExhausted {
                    path_index: *path_index,
                    time_step,
                    max_retries: sampler.max_retries,
                })
            }
        }
    }
}

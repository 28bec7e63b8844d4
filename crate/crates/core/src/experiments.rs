//! Declarative experiment sweeps with reproducible CSV output.
//!
//! An experiment is described by a TOML document. Parsing fills in every
//! default, so the spec echoed into the CSV header fully determines the run.

use std::fmt::{self, Write as _};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{bins_price, bs_call, Lognormal};
use crate::chaosrng::{distribution_report, mix_seed, sample_standard, RngMode, SamplerConfig, GENERATOR_ID};
use crate::emulator::{simulate, EmulationConfig, Precision};
use crate::error::{McqpError, Result};
use crate::fixedpoint::RegisterLayout;
use crate::market::{CodecSet, HestonParams, MarketConfig};
use crate::qae::{fit_loglog_slope, qae_sweep, QaeSweepConfig};
use crate::risk::{expiry_threshold_probability, nested_risk_probability, quantum_nested_pipeline, RiskSpec};
use crate::statevector::McqpCircuit;

pub const SCHEMA_VERSION: u32 = 1;

/// Columns whose values vary between otherwise identical runs.
pub const NONDETERMINISTIC_COLUMNS: &[&str] = &["runtime_ms"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Monte-Carlo price at the base market.
    Price,
    StrikeSweep,
    VolSweep,
    PathsSweep,
    StepsSweep,
    BitsSweep,
    RngGrid,
    Qae,
    Risk,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Price => "price",
            ExperimentKind::StrikeSweep => "strike-sweep",
            ExperimentKind::VolSweep => "vol-sweep",
            ExperimentKind::PathsSweep => "paths-sweep",
            ExperimentKind::StepsSweep => "steps-sweep",
            ExperimentKind::BitsSweep => "bits-sweep",
            ExperimentKind::RngGrid => "rng-grid",
            ExperimentKind::Qae => "qae",
            ExperimentKind::Risk => "risk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RngKind {
    Chaos,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMode {
    ExpiryThreshold,
    NestedClassical,
    NestedQuantum,
}

impl RiskMode {
    fn name(self) -> &'static str {
        match self {
            RiskMode::ExpiryThreshold => "expiry-threshold",
            RiskMode::NestedClassical => "nested-classical",
            RiskMode::NestedQuantum => "nested-quantum",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinsSpec {
    pub bits: u32,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub strikes: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub paths: Vec<u64>,
    pub steps: Vec<u64>,
    pub bits: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RngGridSpec {
    pub indices: u64,
    pub time_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaeSpec {
    pub amplitude: f64,
    pub grover_powers: Vec<u64>,
    pub shots_per_power: u64,
    pub repetitions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskSection {
    pub mode: RiskMode,
    pub tau: f64,
    pub epsilons: Vec<f64>,
    pub outer_paths: u64,
    pub inner_paths: u64,
}

/// Fully materialised experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: u64,
    /// Monte-Carlo paths per trial.
    pub paths: u64,
    /// Register bits for rounded emulation; `None` runs unrounded.
    pub precision_bits: Option<u32>,
    pub output: Option<String>,
    pub market: MarketConfig,
    pub rng: RngKind,
    pub sampler: SamplerConfig,
    pub bins: BinsSpec,
    pub sweep: SweepSpec,
    pub rng_grid: RngGridSpec,
    pub qae: QaeSpec,
    pub risk: RiskSection,
}

// Raw document shape: every field optional, unknown keys rejected.

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    schema_version: Option<u32>,
    kind: Option<ExperimentKind>,
    seed: Option<u64>,
    trials: Option<u64>,
    paths: Option<u64>,
    precision_bits: Option<u32>,
    output: Option<String>,
    market: Option<RawMarket>,
    rng: Option<RawRng>,
    bins: Option<RawBins>,
    sweep: Option<RawSweep>,
    rng_grid: Option<RawRngGrid>,
    qae: Option<RawQae>,
    risk: Option<RawRisk>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    s0: Option<f64>,
    mu: Option<f64>,
    sigma: Option<f64>,
    total_time: Option<f64>,
    steps: Option<u64>,
    strike: Option<f64>,
    rate: Option<f64>,
    heston: Option<RawHeston>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeston {
    kappa: f64,
    theta: f64,
    xi: f64,
    rho: f64,
    v0: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRng {
    mode: Option<RngKind>,
    support_low: Option<f64>,
    support_high: Option<f64>,
    density_normalizer: Option<f64>,
    max_retries: Option<u32>,
    remap_indices: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBins {
    bits: Option<u32>,
    lower: Option<f64>,
    upper: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    strikes: Option<Vec<f64>>,
    sigmas: Option<Vec<f64>>,
    paths: Option<Vec<u64>>,
    steps: Option<Vec<u64>>,
    bits: Option<Vec<u32>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRngGrid {
    indices: Option<u64>,
    time_steps: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQae {
    amplitude: Option<f64>,
    grover_powers: Option<Vec<u64>>,
    shots_per_power: Option<u64>,
    repetitions: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRisk {
    mode: Option<RiskMode>,
    tau: Option<f64>,
    epsilons: Option<Vec<f64>>,
    outer_paths: Option<u64>,
    inner_paths: Option<u64>,
}

/// One semantic problem with a named field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid configuration: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldIssue>),
}

impl From<ConfigError> for McqpError {
    fn from(err: ConfigError) -> Self {
        McqpError::Config(err.to_string())
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

struct Issues(Vec<FieldIssue>);

impl Issues {
    fn check(&mut self, ok: bool, field: &str, message: impl Into<String>) {
        if !ok {
            self.0.push(FieldIssue {
                field: field.into(),
                message: message.into(),
            });
        }
    }

    fn finite(&mut self, value: f64, field: &str) -> bool {
        self.check(value.is_finite(), field, format!("must be finite (got {value})"));
        value.is_finite()
    }

    fn non_empty<T>(&mut self, list: &[T], field: &str) {
        self.check(!list.is_empty(), field, "swept list must not be empty");
    }
}

const DEFAULT_STRIKES: [f64; 5] = [80.0, 90.0, 100.0, 110.0, 120.0];
const DEFAULT_SIGMAS: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

/// Parse and validate a TOML experiment document, materialising defaults.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentSpec, ConfigError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    let spec = materialize(raw);
    let issues = validate(&spec);
    if issues.is_empty() {
        Ok(spec)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

fn materialize(raw: RawSpec) -> ExperimentSpec {
    let m = raw.market.unwrap_or_default();
    let mu = m.mu.unwrap_or(0.05);
    let s0 = m.s0.unwrap_or(100.0);
    let market = MarketConfig {
        s0,
        mu,
        sigma: m.sigma.unwrap_or(0.4),
        total_time: m.total_time.unwrap_or(1.0),
        steps: m.steps.unwrap_or(100),
        strike: m.strike.unwrap_or(100.0),
        rate: m.rate.unwrap_or(mu),
        heston: m.heston.map(|h| HestonParams {
            kappa: h.kappa,
            theta: h.theta,
            xi: h.xi,
            rho: h.rho,
            v0: h.v0,
        }),
    };
    let r = raw.rng.unwrap_or_default();
    let d = SamplerConfig::default();
    let b = raw.bins.unwrap_or_default();
    let s = raw.sweep.unwrap_or_default();
    let g = raw.rng_grid.unwrap_or_default();
    let q = raw.qae.unwrap_or_default();
    let k = raw.risk.unwrap_or_default();
    ExperimentSpec {
        schema_version: raw.schema_version.unwrap_or(SCHEMA_VERSION),
        kind: raw.kind.unwrap_or(ExperimentKind::Price),
        seed: raw.seed.unwrap_or(1),
        trials: raw.trials.unwrap_or(30),
        paths: raw.paths.unwrap_or(10_000),
        precision_bits: raw.precision_bits,
        output: raw.output,
        market,
        rng: r.mode.unwrap_or(RngKind::Reference),
        sampler: SamplerConfig {
            support_low: r.support_low.unwrap_or(d.support_low),
            support_high: r.support_high.unwrap_or(d.support_high),
            density_normalizer: r.density_normalizer.unwrap_or(d.density_normalizer),
            max_retries: r.max_retries.unwrap_or(d.max_retries),
            remap_indices: r.remap_indices.unwrap_or(d.remap_indices),
        },
        bins: BinsSpec {
            bits: b.bits.unwrap_or(5),
            lower: b.lower.unwrap_or(0.0),
            upper: b.upper.unwrap_or(3.0 * s0),
        },
        sweep: SweepSpec {
            strikes: s.strikes.unwrap_or_else(|| DEFAULT_STRIKES.to_vec()),
            sigmas: s.sigmas.unwrap_or_else(|| DEFAULT_SIGMAS.to_vec()),
            paths: s.paths.unwrap_or_else(|| vec![100, 1_000, 10_000, 100_000]),
            steps: s.steps.unwrap_or_else(|| vec![10, 100, 1_000]),
            bits: s.bits.unwrap_or_else(|| vec![4, 8, 12, 16]),
        },
        rng_grid: RngGridSpec {
            indices: g.indices.unwrap_or(1_000),
            time_steps: g.time_steps.unwrap_or(100),
        },
        qae: QaeSpec {
            amplitude: q.amplitude.unwrap_or(0.3),
            grover_powers: q.grover_powers.unwrap_or_else(|| vec![0, 1, 2, 4, 8, 16]),
            shots_per_power: q.shots_per_power.unwrap_or(100),
            repetitions: q.repetitions.unwrap_or(200),
        },
        risk: RiskSection {
            mode: k.mode.unwrap_or(RiskMode::ExpiryThreshold),
            tau: k.tau.unwrap_or(0.5),
            epsilons: k.epsilons.unwrap_or_else(|| vec![0.0]),
            outer_paths: k.outer_paths.unwrap_or(1_000),
            inner_paths: k.inner_paths.unwrap_or(100),
        },
    }
}

fn validate(spec: &ExperimentSpec) -> Vec<FieldIssue> {
    let mut v = Issues(Vec::new());
    v.check(
        spec.schema_version == SCHEMA_VERSION,
        "schema_version",
        format!("unsupported version {} (expected {SCHEMA_VERSION})", spec.schema_version),
    );
    v.check(spec.seed <= i64::MAX as u64, "seed", "must not exceed 2^63 - 1");
    v.check(spec.trials >= 1, "trials", "must be at least 1");
    v.check(spec.paths >= 1, "paths", "must be at least 1");
    if let Some(bits) = spec.precision_bits {
        v.check((2..=30).contains(&bits), "precision_bits", format!("must lie in 2..=30 (got {bits})"));
    }

    let m = &spec.market;
    if v.finite(m.s0, "market.s0") {
        v.check(m.s0 > 0.0, "market.s0", format!("must be positive (got {})", m.s0));
    }
    v.finite(m.mu, "market.mu");
    v.finite(m.rate, "market.rate");
    if v.finite(m.sigma, "market.sigma") {
        v.check(m.sigma >= 0.0, "market.sigma", format!("must be non-negative (got {})", m.sigma));
    }
    if v.finite(m.total_time, "market.total_time") {
        v.check(m.total_time > 0.0, "market.total_time", format!("must be positive (got {})", m.total_time));
    }
    v.check(m.steps >= 1, "market.steps", "must be at least 1");
    if v.finite(m.strike, "market.strike") {
        v.check(m.strike >= 0.0, "market.strike", format!("must be non-negative (got {})", m.strike));
    }
    if let Some(h) = &m.heston {
        v.check(h.v0 >= 0.0, "market.heston.v0", "must be non-negative");
        v.check(h.theta >= 0.0, "market.heston.theta", "must be non-negative");
        v.check(h.xi >= 0.0, "market.heston.xi", "must be non-negative");
        v.check(h.rho.abs() <= 1.0, "market.heston.rho", "must lie in [-1, 1]");
        v.check(h.kappa.is_finite(), "market.heston.kappa", "must be finite");
    }
    if let Err(e) = spec.sampler.validate() {
        v.check(false, "rng", e.to_string());
    }

    v.check((1..=30).contains(&spec.bins.bits), "bins.bits", "must lie in 1..=30");
    v.check(
        spec.bins.lower >= 0.0 && spec.bins.upper > spec.bins.lower && spec.bins.upper.is_finite(),
        "bins",
        "bounds must satisfy 0 <= lower < upper",
    );

    let sweep = &spec.sweep;
    v.non_empty(&sweep.strikes, "sweep.strikes");
    v.check(sweep.strikes.iter().all(|k| k.is_finite() && *k >= 0.0), "sweep.strikes", "must be non-negative");
    v.non_empty(&sweep.sigmas, "sweep.sigmas");
    v.check(sweep.sigmas.iter().all(|s| s.is_finite() && *s >= 0.0), "sweep.sigmas", "must be non-negative");
    v.non_empty(&sweep.paths, "sweep.paths");
    v.check(sweep.paths.iter().all(|&n| n >= 1), "sweep.paths", "must be positive");
    v.non_empty(&sweep.steps, "sweep.steps");
    v.check(sweep.steps.iter().all(|&n| n >= 1), "sweep.steps", "must be positive");
    v.non_empty(&sweep.bits, "sweep.bits");
    v.check(sweep.bits.iter().all(|b| (2..=30).contains(b)), "sweep.bits", "must lie in 2..=30");

    v.check(spec.rng_grid.indices >= 1, "rng_grid.indices", "must be positive");
    v.check(spec.rng_grid.time_steps >= 1, "rng_grid.time_steps", "must be positive");

    let q = &spec.qae;
    v.check((0.0..=1.0).contains(&q.amplitude), "qae.amplitude", "must lie in [0, 1]");
    v.check(q.grover_powers.first() == Some(&0), "qae.grover_powers", "must start with 0");
    v.check(q.grover_powers.windows(2).all(|w| w[0] < w[1]), "qae.grover_powers", "must be strictly ascending");
    v.check(q.shots_per_power >= 1, "qae.shots_per_power", "must be positive");
    v.check(q.repetitions >= 1, "qae.repetitions", "must be positive");

    let r = &spec.risk;
    v.check(r.tau > 0.0 && r.tau < m.total_time, "risk.tau", "must lie strictly inside (0, total_time)");
    v.non_empty(&r.epsilons, "risk.epsilons");
    v.check(r.epsilons.iter().all(|e| e.is_finite() && *e >= 0.0), "risk.epsilons", "must be non-negative");
    v.check(r.outer_paths >= 1, "risk.outer_paths", "must be positive");
    v.check(r.inner_paths >= 1, "risk.inner_paths", "must be positive");
    if spec.kind == ExperimentKind::Risk && r.mode == RiskMode::NestedQuantum {
        for (field, n) in [("risk.outer_paths", r.outer_paths), ("risk.inner_paths", r.inner_paths)] {
            v.check(n.is_power_of_two() && n <= 32, field, "must be a power of two no larger than 32");
        }
    }
    v.0
}

/// Canonical TOML form; reparses to an equal spec.
pub fn serialize_spec(spec: &ExperimentSpec) -> String {
    let m = &spec.market;
    let raw = RawSpec {
        schema_version: Some(spec.schema_version),
        kind: Some(spec.kind),
        seed: Some(spec.seed),
        trials: Some(spec.trials),
        paths: Some(spec.paths),
        precision_bits: spec.precision_bits,
        output: spec.output.clone(),
        market: Some(RawMarket {
            s0: Some(m.s0),
            mu: Some(m.mu),
            sigma: Some(m.sigma),
            total_time: Some(m.total_time),
            steps: Some(m.steps),
            strike: Some(m.strike),
            rate: Some(m.rate),
            heston: m.heston.map(|h| RawHeston {
                kappa: h.kappa,
                theta: h.theta,
                xi: h.xi,
                rho: h.rho,
                v0: h.v0,
            }),
        }),
        rng: Some(RawRng {
            mode: Some(spec.rng),
            support_low: Some(spec.sampler.support_low),
            support_high: Some(spec.sampler.support_high),
            density_normalizer: Some(spec.sampler.density_normalizer),
            max_retries: Some(spec.sampler.max_retries),
            remap_indices: Some(spec.sampler.remap_indices),
        }),
        bins: Some(RawBins {
            bits: Some(spec.bins.bits),
            lower: Some(spec.bins.lower),
            upper: Some(spec.bins.upper),
        }),
        sweep: Some(RawSweep {
            strikes: Some(spec.sweep.strikes.clone()),
            sigmas: Some(spec.sweep.sigmas.clone()),
            paths: Some(spec.sweep.paths.clone()),
            steps: Some(spec.sweep.steps.clone()),
            bits: Some(spec.sweep.bits.clone()),
        }),
        rng_grid: Some(RawRngGrid {
            indices: Some(spec.rng_grid.indices),
            time_steps: Some(spec.rng_grid.time_steps),
        }),
        qae: Some(RawQae {
            amplitude: Some(spec.qae.amplitude),
            grover_powers: Some(spec.qae.grover_powers.clone()),
            shots_per_power: Some(spec.qae.shots_per_power),
            repetitions: Some(spec.qae.repetitions),
        }),
        risk: Some(RawRisk {
            mode: Some(spec.risk.mode),
            tau: Some(spec.risk.tau),
            epsilons: Some(spec.risk.epsilons.clone()),
            outer_paths: Some(spec.risk.outer_paths),
            inner_paths: Some(spec.risk.inner_paths),
        }),
    };
    toml::to_string(&raw).expect("experiment spec serialises to TOML")
}

/// SHA-256 of the canonical serialisation, in hex.
pub fn spec_hash(spec: &ExperimentSpec) -> String {
    Sha256::digest(serialize_spec(spec).as_bytes())
        .iter()
        .fold(String::new(), |mut out, b| {
            let _ = write!(out, "{b:02x}");
            out
        })
}

impl ExperimentSpec {
    /// RNG mode of one trial. Reference trials get independent seeds; chaos
    /// trials use disjoint path-index ranges instead (see [`Self::first_path`]).
    pub fn rng_mode(&self, trial: u64) -> RngMode {
        match self.rng {
            RngKind::Chaos => RngMode::Chaos(self.sampler),
            RngKind::Reference => RngMode::Reference {
                seed: mix_seed(self.seed, trial),
                sampler: self.sampler,
            },
        }
    }

    pub fn first_path(&self, trial: u64, paths: u64) -> u64 {
        match self.rng {
            RngKind::Chaos => trial * paths,
            RngKind::Reference => 0,
        }
    }

    fn precision(&self, market: &MarketConfig, bits: Option<u32>) -> Result<Precision> {
        match bits {
            Some(b) => Ok(Precision::Rounded(CodecSet::uniform(market, b)?)),
            None => Ok(Precision::Unrounded),
        }
    }
}

/// One output row: a sweep point, the method that produced it, and its
/// statistics over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub point: Vec<(String, String)>,
    pub method: String,
    pub trials: u64,
    /// Mean estimate over trials.
    pub mean_value: f64,
    /// Analytic reference value, NaN when none exists.
    pub reference: f64,
    pub mean_abs_error: f64,
    /// Sample standard deviation of the estimate over trials.
    pub std_over_trials: f64,
    pub clamp_count: u64,
    /// Kind-specific metrics, the same names on every row of a run.
    pub extras: Vec<(String, f64)>,
    pub runtime_ms: f64,
}

impl ResultRow {
    pub fn point_value(&self, name: &str) -> Option<&str> {
        self.point.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub spec: ExperimentSpec,
    pub rows: Vec<ResultRow>,
    /// Derived statistics such as fitted slopes.
    pub summary: Vec<(String, f64)>,
}

impl ExperimentOutput {
    pub fn rows_for(&self, method: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    pub fn summary_value(&self, name: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    /// CSV with a `#`-prefixed metadata header and trailing summary lines.
    pub fn to_csv(&self) -> String {
        let spec = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "# mcqp experiment kind={}", spec.kind.name());
        let _ = writeln!(out, "# schema_version={}", spec.schema_version);
        let _ = writeln!(out, "# spec_sha256={}", spec_hash(spec));
        let _ = writeln!(out, "# rng_mode={} generator={}", match spec.rng {
            RngKind::Chaos => "chaos",
            RngKind::Reference => "reference",
        }, GENERATOR_ID);
        let _ = writeln!(out, "# codecs={}", codec_description(spec));
        let _ = writeln!(out, "# versions=mcqp-core {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# nondeterministic_columns={}", NONDETERMINISTIC_COLUMNS.join(","));
        for line in serialize_spec(spec).lines() {
            let _ = writeln!(out, "# spec: {line}");
        }
        let Some(first) = self.rows.first() else {
            return out;
        };
        let mut header: Vec<String> = first.point.iter().map(|(k, _)| k.clone()).collect();
        header.extend(
            ["method", "trials", "mean_value", "reference", "mean_abs_error", "std_over_trials", "clamp_count"]
                .map(String::from),
        );
        header.extend(first.extras.iter().map(|(k, _)| k.clone()));
        header.push("runtime_ms".into());
        let _ = writeln!(out, "{}", header.join(","));
        for row in &self.rows {
            let mut cells: Vec<String> = row.point.iter().map(|(_, v)| v.clone()).collect();
            cells.push(row.method.clone());
            cells.push(row.trials.to_string());
            for x in [row.mean_value, row.reference, row.mean_abs_error, row.std_over_trials] {
                cells.push(x.to_string());
            }
            cells.push(row.clamp_count.to_string());
            cells.extend(row.extras.iter().map(|(_, x)| x.to_string()));
            cells.push(format!("{:.3}", row.runtime_ms));
            let _ = writeln!(out, "{}", cells.join(","));
        }
        for (name, value) in &self.summary {
            let _ = writeln!(out, "# summary: {name}={value}");
        }
        out
    }
}

fn codec_description(spec: &ExperimentSpec) -> String {
    let bits = match (spec.kind, spec.precision_bits) {
        (ExperimentKind::BitsSweep, _) => "swept".to_string(),
        (_, Some(b)) => b.to_string(),
        (_, None) => return "unrounded".into(),
    };
    format!(
        "price=[0,{}] variable=[-{h}*sqrt(dt),{h}*sqrt(dt)] payoff=[0,price_upper-strike] bits={bits}",
        3.0 * spec.market.s0,
        h = crate::market::SAMPLER_HALF_WIDTH,
    )
}

/// Drop columns that legitimately differ between runs, for reproducibility
/// comparisons.
pub fn strip_nondeterministic(csv: &str) -> String {
    let mut drop: Option<Vec<usize>> = None;
    let mut out = String::new();
    for line in csv.lines() {
        if line.starts_with('#') {
            out.push_str(line);
            out.push('\n');
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let positions = drop.get_or_insert_with(|| {
            cells
                .iter()
                .enumerate()
                .filter(|(_, c)| NONDETERMINISTIC_COLUMNS.contains(c))
                .map(|(i, _)| i)
                .collect()
        });
        let kept: Vec<&str> = cells
            .iter()
            .enumerate()
            .filter(|(i, _)| !positions.contains(i))
            .map(|(_, c)| *c)
            .collect();
        out.push_str(&kept.join(","));
        out.push('\n');
    }
    out
}

/// Spearman rank correlation (average ranks for ties).
pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(values: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut ranks = vec![0.0; values.len()];
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
                end += 1;
            }
            let rank = (start + end) as f64 / 2.0;
            for &i in &order[start..=end] {
                ranks[i] = rank;
            }
            start = end + 1;
        }
        ranks
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

struct TrialOutcome {
    value: f64,
    clamps: u64,
    millis: f64,
}

fn fmt_point(value: f64) -> String {
    value.to_string()
}

/// Monte-Carlo pricing row over trials against Black-Scholes.
fn mc_row(spec: &ExperimentSpec, market: MarketConfig, paths: u64, bits: Option<u32>, point: Vec<(String, String)>) -> Result<ResultRow> {
    let precision = spec.precision(&market, bits)?;
    let outcomes: Vec<TrialOutcome> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let start = Instant::now();
            let config = EmulationConfig::new(market, precision, paths, spec.rng_mode(trial))
                .with_first_path(spec.first_path(trial, paths));
            let result = simulate(&config)?;
            Ok(TrialOutcome {
                value: result.mean_payoff * market.discount(),
                clamps: result.clamp_count,
                millis: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect::<Result<_>>()?;
    let reference = bs_call(market.s0, market.strike, market.rate, market.sigma, market.total_time);
    Ok(aggregate(point, "mc", reference, &outcomes, Vec::new()))
}

fn aggregate(point: Vec<(String, String)>, method: &str, reference: f64, outcomes: &[TrialOutcome], extras: Vec<(String, f64)>) -> ResultRow {
    let values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let (mean_value, std_over_trials) = mean_std(&values);
    let mean_abs_error = if reference.is_nan() {
        f64::NAN
    } else {
        values.iter().map(|v| (v - reference).abs()).sum::<f64>() / values.len() as f64
    };
    ResultRow {
        point,
        method: method.into(),
        trials: outcomes.len() as u64,
        mean_value,
        reference,
        mean_abs_error,
        std_over_trials,
        clamp_count: outcomes.iter().map(|o| o.clamps).sum(),
        extras,
        runtime_ms: outcomes.iter().map(|o| o.millis).sum(),
    }
}

fn bins_row(spec: &ExperimentSpec, market: MarketConfig, point: Vec<(String, String)>) -> Result<ResultRow> {
    let start = Instant::now();
    let value = bins_price(&market, spec.bins.bits, spec.bins.lower, spec.bins.upper)?;
    let reference = bs_call(market.s0, market.strike, market.rate, market.sigma, market.total_time);
    let outcome = TrialOutcome {
        value,
        clamps: 0,
        millis: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(aggregate(point, "bins", reference, &[outcome], Vec::new()))
}

fn require_bsm(spec: &ExperimentSpec) -> Result<()> {
    if spec.market.heston.is_some() {
        return Err(McqpError::Config(format!(
            "{} compares against Black-Scholes and needs a market without Heston parameters",
            spec.kind.name()
        )));
    }
    Ok(())
}

fn error_slope(rows: &[ResultRow], x_name: &str) -> Result<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .map(|r| r.point_value(x_name).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_abs_error).collect();
    fit_loglog_slope(&xs, &ys)
}

/// Market value at `tau` below which the call is worth less than `epsilon`,
/// turned into a probability under the lognormal law of `S_tau`.
pub fn nested_threshold_oracle(market: &MarketConfig, tau: f64, epsilon: f64) -> f64 {
    let remaining = market.total_time - tau;
    let value = |s: f64| bs_call(s, market.strike, market.rate, market.sigma, remaining);
    if epsilon <= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, market.s0.max(market.strike) + epsilon);
    while value(hi) < epsilon {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if value(mid) < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let at_tau = MarketConfig {
        total_time: tau,
        ..*market
    };
    Lognormal::terminal(&at_tau).cdf(0.5 * (lo + hi))
}

fn risk_rows(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let market = spec.market;
    let r = &spec.risk;
    let jobs: Vec<(usize, u64)> = (0..r.epsilons.len())
        .flat_map(|e| (0..spec.trials).map(move |t| (e, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(e, trial)| {
            let start = Instant::now();
            let epsilon = r.epsilons[e];
            let rng = spec.rng_mode(trial);
            let value = match r.mode {
                RiskMode::ExpiryThreshold => {
                    let precision = spec.precision(&market, spec.precision_bits)?;
                    expiry_threshold_probability(&market, precision, epsilon, spec.paths, rng)?.value
                }
                RiskMode::NestedClassical => {
                    let precision = spec.precision(&market, spec.precision_bits)?;
                    let risk = RiskSpec {
                        tau: r.tau,
                        epsilon,
                        outer_paths: r.outer_paths,
                        inner_paths: r.inner_paths,
                    };
                    nested_risk_probability(&market, precision, &risk, rng)?.probability.value
                }
                RiskMode::NestedQuantum => {
                    let bits = spec.precision_bits.unwrap_or(6);
                    let layout = RegisterLayout::new(
                        r.outer_paths.trailing_zeros(),
                        bits,
                        bits,
                        bits,
                        market.steps,
                    )
                    .with_secondary_index(r.inner_paths.trailing_zeros(), bits);
                    let circuit = McqpCircuit::with_codecs(
                        layout,
                        market,
                        CodecSet::defaults(&market, &layout)?,
                        spec.sampler,
                    )?;
                    quantum_nested_pipeline(&circuit, r.tau, epsilon)?.probability
                }
            };
            Ok(TrialOutcome {
                value,
                clamps: 0,
                millis: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect::<Result<_>>()?;
    let trials = spec.trials as usize;
    Ok(r.epsilons
        .iter()
        .enumerate()
        .map(|(e, &epsilon)| {
            let reference = match r.mode {
                RiskMode::ExpiryThreshold if market.heston.is_none() => {
                    Lognormal::terminal(&market).survival(market.strike + epsilon)
                }
                RiskMode::NestedClassical | RiskMode::NestedQuantum if market.heston.is_none() => {
                    nested_threshold_oracle(&market, r.tau, epsilon)
                }
                _ => f64::NAN,
            };
            aggregate(
                vec![("epsilon".into(), fmt_point(epsilon))],
                r.mode.name(),
                reference,
                &outcomes[e * trials..(e + 1) * trials],
                Vec::new(),
            )
        })
        .collect())
}

fn rng_grid_rows(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let g = &spec.rng_grid;
    let start = Instant::now();
    let draws: Vec<f64> = (0..g.indices)
        .into_par_iter()
        .map(|i| (0..g.time_steps).map(|t| sample_standard(i, t, &spec.sampler)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let report = distribution_report(&draws)?;
    let extras = vec![
        ("variance".into(), report.variance),
        ("skewness".into(), report.skewness),
        ("excess_kurtosis".into(), report.excess_kurtosis),
        ("ks_statistic".into(), report.ks_statistic),
        ("ks_p_value".into(), report.ks_p_value),
        ("chi_square".into(), report.chi_square),
        ("chi_square_p_value".into(), report.chi_square_p_value),
    ];
    Ok(vec![ResultRow {
        point: vec![
            ("indices".into(), g.indices.to_string()),
            ("time_steps".into(), g.time_steps.to_string()),
        ],
        method: "chaos".into(),
        trials: 1,
        mean_value: report.mean,
        reference: 0.0,
        mean_abs_error: report.mean.abs(),
        std_over_trials: report.variance.sqrt(),
        clamp_count: 0,
        extras,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    }])
}

/// Run every point × trial job and assemble rows in canonical order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let issues = validate(spec);
    if !issues.is_empty() {
        return Err(ConfigError::Invalid(issues).into());
    }
    let base = spec.market;
    let point = |name: &str, value: String| vec![(name.to_string(), value)];
    let mut summary = Vec::new();
    let rows = match spec.kind {
        ExperimentKind::Price => {
            let mut row = mc_row(spec, base, spec.paths, spec.precision_bits, point("paths", spec.paths.to_string()))?;
            if base.heston.is_some() {
                row.reference = f64::NAN;
                row.mean_abs_error = f64::NAN;
            }
            vec![row]
        }
        ExperimentKind::StrikeSweep | ExperimentKind::VolSweep => {
            require_bsm(spec)?;
            let (name, values) = match spec.kind {
                ExperimentKind::StrikeSweep => ("strike", &spec.sweep.strikes),
                _ => ("sigma", &spec.sweep.sigmas),
            };
            let mut rows = Vec::new();
            for &x in values {
                let market = match spec.kind {
                    ExperimentKind::StrikeSweep => MarketConfig { strike: x, ..base },
                    _ => MarketConfig { sigma: x, ..base },
                };
                rows.push(mc_row(spec, market, spec.paths, spec.precision_bits, point(name, fmt_point(x)))?);
                rows.push(bins_row(spec, market, point(name, fmt_point(x)))?);
            }
            if spec.kind == ExperimentKind::VolSweep && values.len() > 1 {
                for method in ["mc", "bins"] {
                    let selected: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method).collect();
                    let errors: Vec<f64> = selected.iter().map(|r| r.mean_abs_error).collect();
                    summary.push((format!("{method}_error_rank_correlation"), rank_correlation(values, &errors)));
                }
            }
            rows
        }
        ExperimentKind::PathsSweep => {
            require_bsm(spec)?;
            let rows = spec
                .sweep
                .paths
                .iter()
                .map(|&n| mc_row(spec, base, n, spec.precision_bits, point("paths", n.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if rows.len() > 1 {
                summary.push(("error_slope".into(), error_slope(&rows, "paths")?));
            }
            rows
        }
        ExperimentKind::StepsSweep => {
            require_bsm(spec)?;
            spec.sweep
                .steps
                .iter()
                .map(|&m| {
                    let market = MarketConfig { steps: m, ..base };
                    mc_row(spec, market, spec.paths, spec.precision_bits, point("steps", m.to_string()))
                })
                .collect::<Result<Vec<_>>>()?
        }
        ExperimentKind::BitsSweep => {
            require_bsm(spec)?;
            spec.sweep
                .bits
                .iter()
                .map(|&b| mc_row(spec, base, spec.paths, Some(b), point("bits", b.to_string())))
                .collect::<Result<Vec<_>>>()?
        }
        ExperimentKind::RngGrid => rng_grid_rows(spec)?,
        ExperimentKind::Qae => {
            let start = Instant::now();
            let sweep = qae_sweep(&QaeSweepConfig {
                amplitude: spec.qae.amplitude,
                grover_powers: spec.qae.grover_powers.clone(),
                shots_per_power: spec.qae.shots_per_power,
                repetitions: spec.qae.repetitions,
                seed: spec.seed,
            })?;
            let millis = start.elapsed().as_secs_f64() * 1e3 / sweep.points.len() as f64;
            summary.push(("mlae_slope".into(), sweep.slope));
            summary.push(("baseline_slope".into(), sweep.baseline_slope));
            sweep
                .points
                .iter()
                .flat_map(|p| {
                    let at = vec![
                        ("max_power".to_string(), p.max_power.to_string()),
                        ("budget".to_string(), p.budget.to_string()),
                    ];
                    [("mlae", p.rmse), ("bernoulli", p.baseline_rmse)].map(|(method, rmse)| ResultRow {
                        point: at.clone(),
                        method: method.into(),
                        trials: spec.qae.repetitions,
                        mean_value: f64::NAN,
                        reference: spec.qae.amplitude,
                        mean_abs_error: f64::NAN,
                        std_over_trials: f64::NAN,
                        clamp_count: 0,
                        extras: vec![("rmse".into(), rmse)],
                        runtime_ms: millis / 2.0,
                    })
                })
                .collect()
        }
        ExperimentKind::Risk => risk_rows(spec)?,
    };
    Ok(ExperimentOutput {
        spec: spec.clone(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = parse_config("[market]\ns0 = 100.0\nsigma = 0.4\nstrike = 100.0\n").unwrap();
        assert_eq!(spec.schema_version, SCHEMA_VERSION);
        assert_eq!(spec.kind, ExperimentKind::Price);
        assert_eq!(spec.market.rate, spec.market.mu);
        assert_eq!(spec.market.steps, 100);
        assert_eq!(spec.bins.upper, 300.0);
        assert_eq!(spec.sweep.strikes, DEFAULT_STRIKES.to_vec());
        assert_eq!(spec.trials, 30);
    }

    #[test]
    fn rate_defaults_to_drift() {
        let spec = parse_config("[market]\nmu = 0.03\n").unwrap();
        assert_eq!(spec.market.rate, 0.03);
        let spec = parse_config("[market]\nmu = 0.03\nrate = 0.01\n").unwrap();
        assert_eq!(spec.market.rate, 0.01);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("schema_version = 1\n[market]\nsigma = = 0.4\n").unwrap_err();
        match err {
            ConfigError::Syntax { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_config("kind = \"moon-sweep\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }), "{err:?}");
        let err = parse_config("[market]\nsgima = 0.4\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn semantic_errors_are_exhaustive() {
        let err = parse_config("trials = 0\n[market]\nsigma = -0.1\ns0 = -1.0\n[sweep]\nstrikes = []\n").unwrap_err();
        let ConfigError::Invalid(issues) = err else {
            panic!("expected semantic errors");
        };
        let fields: Vec<&str> = issues.iter().map(|i| i.field.as_str()).collect();
        for expected in ["trials", "market.sigma", "market.s0", "sweep.strikes"] {
            assert!(fields.contains(&expected), "{fields:?}");
        }
        let message = ConfigError::Invalid(issues).to_string();
        assert!(message.contains("market.sigma: must be non-negative"));
    }

    #[test]
    fn serialization_round_trips() {
        let text = "kind = \"vol-sweep\"\nseed = 7\nprecision_bits = 8\n[market]\nsigma = 0.25\n[market.heston]\nkappa = 1.0\ntheta = 0.04\nxi = 0.3\nrho = -0.5\nv0 = 0.04\n[risk]\nmode = \"nested-classical\"\nepsilons = [1.0, 2.5]\n";
        let spec = parse_config(text).unwrap();
        let again = parse_config(&serialize_spec(&spec)).unwrap();
        assert_eq!(spec, again);
        assert_eq!(serialize_spec(&spec), serialize_spec(&again));
    }

    #[test]
    fn unsupported_schema_version() {
        let err = parse_config("schema_version = 2\n").unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn rank_correlation_examples() {
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn nested_oracle_at_median_is_one_half() {
        let market = MarketConfig::bsm(100.0, 0.05, 0.4, 1.0, 100, 100.0);
        let at_tau = MarketConfig { total_time: 0.5, ..market };
        let median = Lognormal::terminal(&at_tau).log_mean.exp();
        let epsilon = bs_call(median, 100.0, 0.05, 0.4, 0.5);
        assert!((nested_threshold_oracle(&market, 0.5, epsilon) - 0.5).abs() < 1e-9);
        assert_eq!(nested_threshold_oracle(&market, 0.5, 0.0), 0.0);
    }

    #[test]
    fn small_runs_are_reproducible() {
        let text = "kind = \"strike-sweep\"\ntrials = 3\npaths = 500\n[market]\nsteps = 10\n[sweep]\nstrikes = [90.0, 110.0]\n";
        let spec = parse_config(text).unwrap();
        let first = run_experiment(&spec).unwrap();
        let second = run_experiment(&spec).unwrap();
        assert_eq!(first.rows.len(), 4);
        assert_eq!(strip_nondeterministic(&first.to_csv()), strip_nondeterministic(&second.to_csv()));
        assert!(first.to_csv().contains(&format!("# spec_sha256={}", spec_hash(&spec))));
    }
}

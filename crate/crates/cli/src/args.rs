use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mcqp", version, about = "Quantum-parallel Monte-Carlo option pricing simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for the stream generator. Chaos-mode draws depend only on the
    /// path index and time step, so they ignore it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price a European call.
    Price(PriceArgs),
    /// Run a TOML experiment file and emit its result table.
    Experiment(ExperimentArgs),
    /// Goodness-of-fit report for the normal sampler over an index x step grid.
    RngTest(RngTestArgs),
    /// Amplitude-estimation error against query budget.
    QaeSweep(QaeSweepArgs),
    /// Threshold and nested risk probabilities.
    Risk(RiskArgs),
    /// Simulate the circuit on a statevector and dump the final amplitudes.
    StateDump(StateDumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RngChoice {
    Chaos,
    Reference,
}

#[derive(Debug, Clone, Args)]
pub struct MarketArgs {
    #[arg(long, default_value_t = 100.0)]
    pub s0: f64,
    /// Drift; also the discount rate unless --rate is given.
    #[arg(long, default_value_t = 0.05)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.4)]
    pub sigma: f64,
    #[arg(long)]
    pub rate: Option<f64>,
    /// Time to expiry in years.
    #[arg(long, default_value_t = 1.0)]
    pub maturity: f64,
    #[arg(long, default_value_t = 100)]
    pub steps: u64,
    #[arg(long, default_value_t = 100.0)]
    pub strike: f64,
    #[command(flatten)]
    pub heston: HestonArgs,
}

/// Heston dynamics are used when all five parameters are present.
#[derive(Debug, Clone, Args)]
pub struct HestonArgs {
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PriceModel {
    /// Path emulator.
    Mc,
    /// Binned terminal lognormal law.
    Bins,
    /// Closed-form Black-Scholes.
    Bs,
    /// Full statevector simulation (small index registers only).
    Statevector,
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[arg(long, value_enum, default_value_t = PriceModel::Mc)]
    pub model: PriceModel,
    #[arg(long, default_value_t = 10_000)]
    pub paths: u64,
    /// Round every register to this many bits; unrounded when absent.
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long, value_enum, default_value_t = RngChoice::Reference)]
    pub rng: RngChoice,
    /// Price bins for the bins model, as a bit count.
    #[arg(long, default_value_t = 5)]
    pub bin_bits: u32,
    /// Index register width for the statevector model.
    #[arg(long, default_value_t = 4)]
    pub index_bits: u32,
    /// Write one undiscounted payoff per path to this CSV file.
    #[arg(long)]
    pub dump_payoffs: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub spec_file: PathBuf,
}

#[derive(Debug, Args)]
pub struct RngTestArgs {
    #[arg(long, default_value_t = 1000)]
    pub indices: u64,
    #[arg(long, default_value_t = 100)]
    pub steps: u64,
    #[arg(long, value_enum, default_value_t = RngChoice::Chaos)]
    pub rng: RngChoice,
    /// Seed the raw indices without the +2 shift (index 0 is then invalid).
    #[arg(long)]
    pub no_remap: bool,
    /// Write every draw as an `index,step,value` row to this CSV file.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QaeSweepArgs {
    #[arg(long, default_value_t = 0.3)]
    pub amplitude: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 4, 8, 16])]
    pub powers: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    pub shots: u64,
    #[arg(long, default_value_t = 200)]
    pub repetitions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RiskModeArg {
    ExpiryThreshold,
    NestedClassical,
    NestedQuantum,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[arg(long, value_enum, default_value_t = RiskModeArg::ExpiryThreshold)]
    pub mode: RiskModeArg,
    /// Valuation time for nested modes, in years.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Paths for expiry-threshold mode.
    #[arg(long, default_value_t = 100_000)]
    pub paths: u64,
    #[arg(long, default_value_t = 1000)]
    pub outer: u64,
    #[arg(long, default_value_t = 100)]
    pub inner: u64,
    /// Register precision; classical modes run unrounded when absent.
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long, value_enum, default_value_t = RngChoice::Reference)]
    pub rng: RngChoice,
    /// Write the per-outer-path values of nested modes to this CSV file.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StateDumpArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[arg(long, default_value_t = 3)]
    pub index_bits: u32,
    #[arg(long, default_value_t = 5)]
    pub variable_bits: u32,
    #[arg(long, default_value_t = 5)]
    pub price_bits: u32,
    #[arg(long, default_value_t = 5)]
    pub payoff_bits: u32,
    /// Heston variance register width.
    #[arg(long, default_value_t = 5)]
    pub vol_bits: u32,
    /// Heston variance-noise register width.
    #[arg(long, default_value_t = 5)]
    pub vol_variable_bits: u32,
}

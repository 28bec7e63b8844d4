use std::fmt::Write as _;
use std::fs;

use mcqp_core::analytic::{bins_price, bs_call, Lognormal};
use mcqp_core::chaosrng::{distribution_report, Dim, DistributionReport, RngMode, SamplerConfig};
use mcqp_core::emulator::{simulate, EmulationConfig, Precision};
use mcqp_core::experiments::{parse_config, run_experiment};
use mcqp_core::qae::{self, QaeSweepConfig};
use mcqp_core::risk::{expiry_threshold_probability, nested_risk_probability, quantum_nested_pipeline, RiskSpec};
use mcqp_core::statevector::McqpCircuit;
use mcqp_core::{CodecSet, HestonParams, MarketConfig, RegisterLayout};

use crate::args::*;
use crate::{emit, CliError, CliResult};

const DEFAULT_SEED: u64 = 1;

fn market(args: &MarketArgs) -> CliResult<MarketConfig> {
    let mut market = MarketConfig::bsm(args.s0, args.mu, args.sigma, args.maturity, args.steps, args.strike);
    if let Some(rate) = args.rate {
        market = market.with_rate(rate);
    }
    let h = &args.heston;
    match (h.kappa, h.theta, h.xi, h.rho, h.v0) {
        (Some(kappa), Some(theta), Some(xi), Some(rho), Some(v0)) => {
            market = market.with_heston(HestonParams {
                kappa,
                theta,
                xi,
                rho,
                v0,
            });
        }
        (None, None, None, None, None) => {}
        _ => {
            return Err(CliError::Usage(
                "Heston dynamics need all of --kappa, --theta, --xi, --rho and --v0".into(),
            ))
        }
    }
    market.validate()?;
    Ok(market)
}

fn rng(choice: RngChoice, global: &GlobalArgs, sampler: SamplerConfig) -> RngMode {
    match choice {
        RngChoice::Chaos => RngMode::Chaos(sampler),
        RngChoice::Reference => RngMode::Reference {
            seed: global.seed.unwrap_or(DEFAULT_SEED),
            sampler,
        },
    }
}

fn rng_label(mode: &RngMode) -> String {
    match mode {
        RngMode::Chaos(_) => "chaos".into(),
        RngMode::Reference { seed, .. } => format!("reference seed={seed}"),
    }
}

fn precision(market: &MarketConfig, bits: Option<u32>) -> CliResult<Precision> {
    Ok(match bits {
        Some(b) => Precision::Rounded(CodecSet::uniform(market, b)?),
        None => Precision::Unrounded,
    })
}

fn market_header(out: &mut String, market: &MarketConfig) {
    let _ = writeln!(
        out,
        "# market: s0={} mu={} sigma={} rate={} maturity={} steps={} strike={}",
        market.s0, market.mu, market.sigma, market.rate, market.total_time, market.steps, market.strike
    );
    if let Some(h) = market.heston {
        let _ = writeln!(
            out,
            "# heston: kappa={} theta={} xi={} rho={} v0={}",
            h.kappa, h.theta, h.xi, h.rho, h.v0
        );
    }
}

fn reference_price(market: &MarketConfig) -> f64 {
    match market.heston {
        Some(_) => f64::NAN,
        None => bs_call(market.s0, market.strike, market.rate, market.sigma, market.total_time),
    }
}

pub fn price(global: &GlobalArgs, args: &PriceArgs) -> CliResult<String> {
    let market = market(&args.market)?;
    let reference = reference_price(&market);
    let mut out = String::from("# command: price\n");
    market_header(&mut out, &market);
    let (value, standard_error, paths, clamps) = match args.model {
        PriceModel::Bs => {
            if market.heston.is_some() {
                return Err(CliError::Usage("the bs model has no Heston closed form".into()));
            }
            (reference, 0.0, 0, 0)
        }
        PriceModel::Bins => {
            let _ = writeln!(out, "# bins: bits={} bounds=[0,{}]", args.bin_bits, 3.0 * market.s0);
            (bins_price(&market, args.bin_bits, 0.0, 3.0 * market.s0)?, 0.0, 0, 0)
        }
        PriceModel::Mc => {
            let rng = rng(args.rng, global, SamplerConfig::default());
            let mut config = EmulationConfig::new(market, precision(&market, args.bits)?, args.paths, rng);
            if args.dump_payoffs.is_some() {
                config = config.keeping_payoffs();
            }
            let result = simulate(&config)?;
            let _ = writeln!(out, "# rng: {}", rng_label(&rng));
            if let (Some(path), Some(payoffs)) = (&args.dump_payoffs, &result.payoffs) {
                let mut dump = String::from("path,payoff\n");
                for (i, p) in payoffs.iter().enumerate() {
                    let _ = writeln!(dump, "{i},{p:.17e}");
                }
                emit(Some(path), &dump)?;
            }
            let discount = market.discount();
            (
                result.mean_payoff * discount,
                result.standard_error() * discount,
                result.num_paths,
                result.clamp_count,
            )
        }
        PriceModel::Statevector => {
            let b = args.bits.unwrap_or(8);
            let mut layout = RegisterLayout::new(args.index_bits, b, b, b, market.steps);
            if market.heston.is_some() {
                layout = layout.with_heston(b, b);
            }
            let circuit = McqpCircuit::new(layout, market)?;
            let state = circuit.run()?;
            (circuit.option_price(&state), 0.0, 1u64 << args.index_bits, state.clamp_count())
        }
    };
    out.push_str("model,price,standard_error,reference,abs_error,paths,clamp_count\n");
    let model = match args.model {
        PriceModel::Mc => "mc",
        PriceModel::Bins => "bins",
        PriceModel::Bs => "bs",
        PriceModel::Statevector => "statevector",
    };
    let _ = writeln!(
        out,
        "{model},{value:.17e},{standard_error:.17e},{reference:.17e},{:.17e},{paths},{clamps}",
        (value - reference).abs()
    );
    Ok(out)
}

pub fn experiment(global: &GlobalArgs, args: &ExperimentArgs) -> CliResult<String> {
    let text = fs::read_to_string(&args.spec_file)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.spec_file.display())))?;
    let mut spec = parse_config(&text).map_err(|source| CliError::Config {
        path: args.spec_file.clone(),
        source,
    })?;
    if let Some(seed) = global.seed {
        spec.seed = seed;
    }
    Ok(run_experiment(&spec)?.to_csv())
}

pub fn rng_test(global: &GlobalArgs, args: &RngTestArgs) -> CliResult<String> {
    use rayon::prelude::*;

    if args.indices == 0 || args.steps == 0 {
        return Err(CliError::Usage("--indices and --steps must be positive".into()));
    }
    let sampler = SamplerConfig {
        remap_indices: !args.no_remap,
        ..SamplerConfig::default()
    };
    let mode = rng(args.rng, global, sampler);
    let rows: Vec<Vec<f64>> = (0..args.indices)
        .into_par_iter()
        .map(|i| {
            let mut source = mode.path_source(i, 0);
            (0..args.steps).map(|t| source.standard(t, Dim::Price)).collect()
        })
        .collect::<Result<_, _>>()?;
    if let Some(path) = &args.dump {
        let mut dump = String::from("index,step,value\n");
        for (i, row) in rows.iter().enumerate() {
            for (t, z) in row.iter().enumerate() {
                let _ = writeln!(dump, "{i},{t},{z:.17e}");
            }
        }
        emit(Some(path), &dump)?;
    }
    let draws: Vec<f64> = rows.into_iter().flatten().collect();
    let report = distribution_report(&draws)?;
    let mut out = format!(
        "# command: rng-test\n# rng: {} indices={} steps={} remap={}\n",
        rng_label(&mode),
        args.indices,
        args.steps,
        !args.no_remap
    );
    let _ = writeln!(out, "{}\n{}", DistributionReport::csv_header(), report.csv_row());
    Ok(out)
}

pub fn qae_sweep(global: &GlobalArgs, args: &QaeSweepArgs) -> CliResult<String> {
    let sweep = qae::qae_sweep(&QaeSweepConfig {
        amplitude: args.amplitude,
        grover_powers: args.powers.clone(),
        shots_per_power: args.shots,
        repetitions: args.repetitions,
        seed: global.seed.unwrap_or(DEFAULT_SEED),
    })?;
    let powers: Vec<String> = args.powers.iter().map(u64::to_string).collect();
    let mut out = format!(
        "# command: qae-sweep\n# amplitude={} powers={} shots={} repetitions={}\n{}\n",
        args.amplitude,
        powers.join(";"),
        args.shots,
        args.repetitions,
        qae::QaeSweep::csv_header()
    );
    for row in sweep.csv_rows() {
        let _ = writeln!(out, "{row}");
    }
    let _ = writeln!(out, "# summary: mlae_slope={:.17e}", sweep.slope);
    let _ = writeln!(out, "# summary: baseline_slope={:.17e}", sweep.baseline_slope);
    Ok(out)
}

pub fn risk(global: &GlobalArgs, args: &RiskArgs) -> CliResult<String> {
    let market = market(&args.market)?;
    let mut out = String::from("# command: risk\n");
    market_header(&mut out, &market);
    let spec = RiskSpec {
        tau: args.tau,
        epsilon: args.epsilon,
        outer_paths: args.outer,
        inner_paths: args.inner,
    };
    let rng = rng(args.rng, global, SamplerConfig::default());
    let (mode, value, standard_error, reference, values) = match args.mode {
        RiskModeArg::ExpiryThreshold => {
            let p = expiry_threshold_probability(&market, precision(&market, args.bits)?, args.epsilon, args.paths, rng)?;
            let reference = match market.heston {
                None => Lognormal::terminal(&market).survival(market.strike + args.epsilon),
                Some(_) => f64::NAN,
            };
            ("expiry-threshold", p.value, p.standard_error, reference, None)
        }
        RiskModeArg::NestedClassical => {
            let result = nested_risk_probability(&market, precision(&market, args.bits)?, &spec, rng)?;
            let p = result.probability;
            ("nested-classical", p.value, p.standard_error, f64::NAN, Some(result.values))
        }
        RiskModeArg::NestedQuantum => {
            let layout = nested_layout(&market, args)?;
            let circuit = McqpCircuit::new(layout, market)?;
            let result = quantum_nested_pipeline(&circuit, args.tau, args.epsilon)?;
            ("nested-quantum", result.probability, 0.0, f64::NAN, Some(result.values))
        }
    };
    if let (Some(path), Some(values)) = (&args.dump, values) {
        let mut dump = String::from("outer_path,value\n");
        for (i, v) in values.iter().enumerate() {
            let _ = writeln!(dump, "{i},{v:.17e}");
        }
        emit(Some(path), &dump)?;
    }
    let _ = writeln!(out, "# rng: {}", rng_label(&rng));
    out.push_str("mode,tau,epsilon,probability,standard_error,reference\n");
    let _ = writeln!(
        out,
        "{mode},{},{},{value:.17e},{standard_error:.17e},{reference:.17e}",
        args.tau, args.epsilon
    );
    Ok(out)
}

fn nested_layout(market: &MarketConfig, args: &RiskArgs) -> CliResult<RegisterLayout> {
    for (flag, n) in [("--outer", args.outer), ("--inner", args.inner)] {
        if !n.is_power_of_two() {
            return Err(CliError::Usage(format!("{flag} must be a power of two in nested-quantum mode, got {n}")));
        }
    }
    let bits = args.bits.unwrap_or(6);
    let mut layout = RegisterLayout::new(args.outer.trailing_zeros(), bits, bits, bits, market.steps)
        .with_secondary_index(args.inner.trailing_zeros(), bits);
    if market.heston.is_some() {
        layout = layout.with_heston(bits, bits);
    }
    Ok(layout)
}

pub fn state_dump(_global: &GlobalArgs, args: &StateDumpArgs) -> CliResult<String> {
    let market = market(&args.market)?;
    let mut layout = RegisterLayout::new(
        args.index_bits,
        args.variable_bits,
        args.price_bits,
        args.payoff_bits,
        market.steps,
    );
    if market.heston.is_some() {
        layout = layout.with_heston(args.vol_bits, args.vol_variable_bits);
    }
    let circuit = McqpCircuit::new(layout, market)?;
    let state = circuit.run()?;
    let mut out = String::from("# command: state-dump\n");
    market_header(&mut out, &market);
    let _ = writeln!(
        out,
        "# layout: index={} variable={} price={} payoff={} support={} clamps={}",
        args.index_bits,
        args.variable_bits,
        args.price_bits,
        args.payoff_bits,
        state.support_size(),
        state.clamp_count()
    );
    out.push_str(&state.to_csv(&circuit.codecs));
    let _ = writeln!(out, "# summary: option_price={:.17e}", circuit.option_price(&state));
    Ok(out)
}

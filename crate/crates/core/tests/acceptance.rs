//! End-to-end acceptance checks. Each test prints one PASS/FAIL line; run
//! with `cargo test -p mcqp-core --test acceptance -- --nocapture`.

use std::time::{Duration, Instant};

use mcqp_core::analytic::{bs_call, norm_cdf};
use mcqp_core::chaosrng::{distribution_report, sample_standard, RngMode, SamplerConfig};
use mcqp_core::emulator::{simulate, simulate_with_threads, EmulationConfig, Precision};
use mcqp_core::experiments::{parse_config, run_experiment};
use mcqp_core::qae::{qae_sweep, QaeSweepConfig};
use mcqp_core::risk::{expiry_threshold_probability, nested_risk_probability, quantum_nested_pipeline, RiskSpec};
use mcqp_core::statevector::{McqpCircuit, QState, Register};
use mcqp_core::{CodecSet, FixedPointCodec, HestonParams, MarketConfig, RegisterLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, title: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{verdict} criterion {criterion:>2} ({title}): {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed < Duration::from_secs(limit_secs)
}

fn base_market() -> MarketConfig {
    MarketConfig::bsm(100.0, 0.05, 0.4, 1.0, 100, 100.0)
}

/// Per-index payoff codes of a state after the payoff operator.
fn payoff_codes(state: &QState) -> Vec<u64> {
    let mut codes: Vec<(u64, u64)> = state
        .amplitudes()
        .keys()
        .map(|&k| (state.get(k, Register::Index), state.get(k, Register::Payoff)))
        .collect();
    codes.sort();
    codes.into_iter().map(|(_, c)| c).collect()
}

fn random_circuit(rng: &mut ChaCha8Rng) -> McqpCircuit {
    let n = rng.random_range(1..=6);
    let steps = rng.random_range(1..=8);
    let bits = |rng: &mut ChaCha8Rng| rng.random_range(2..=6);
    let (kv, ks, kp) = (bits(rng), bits(rng), bits(rng));
    let market = MarketConfig::bsm(
        rng.random_range(50.0..150.0),
        rng.random_range(-0.05..0.15),
        rng.random_range(0.0..0.8),
        rng.random_range(0.25..2.0),
        steps,
        rng.random_range(40.0..160.0),
    );
    if rng.random_bool(0.25) {
        let heston = HestonParams {
            kappa: rng.random_range(0.0..3.0),
            theta: rng.random_range(0.01..0.2),
            xi: rng.random_range(0.0..1.0),
            rho: rng.random_range(-0.9..0.9),
            v0: rng.random_range(0.01..0.2),
        };
        let layout = RegisterLayout::new(n, kv, ks, kp, steps).with_heston(bits(rng), bits(rng));
        McqpCircuit::new(layout, market.with_heston(heston)).unwrap()
    } else {
        McqpCircuit::new(RegisterLayout::new(n, kv, ks, kp, steps), market).unwrap()
    }
}

#[test]
fn criterion_01_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let configs = 250;
    let mut mismatches = Vec::new();
    for c in 0..configs {
        let circuit = random_circuit(&mut rng);
        let paid = circuit.evolve_to_payoff().unwrap();
        let state = circuit.apply_m(&paid, circuit.payoff_max()).unwrap();
        let emulated = simulate(
            &EmulationConfig::new(
                circuit.market,
                Precision::Rounded(circuit.codecs),
                circuit.layout.num_paths(),
                RngMode::Chaos(circuit.sampler),
            )
            .keeping_payoffs(),
        )
        .unwrap();
        let codec = circuit.codecs.payoff;
        let emulated_codes: Vec<u64> = emulated
            .payoffs
            .as_ref()
            .unwrap()
            .iter()
            .map(|&p| codec.encode(p).unwrap())
            .collect();
        let n = circuit.layout.num_paths();
        let recovered_sum =
            (state.ancilla_one_probability() * (n * codec.max_code()) as f64).round() as u64;
        let recovered_mean = codec.mean_of_codes(recovered_sum, n);
        let ok = payoff_codes(&paid) == emulated_codes
            && Some(recovered_sum) == emulated.payoff_code_sum
            && recovered_mean == emulated.mean_payoff
            && (circuit.mean_payoff(&state) - emulated.mean_payoff).abs()
                <= 1e-9 * codec.upper_bound();
        if !ok {
            mismatches.push(c);
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "statevector/emulator oracle equivalence",
        mismatches.is_empty() && within(elapsed, 120),
        format!("{configs} configs, mismatches {mismatches:?}, {:.1}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_bsm_convergence() {
    let start = Instant::now();
    let market = base_market();
    // chaos seeds collapse to a few dozen distinct values per 10^4 indices
    // past i ~ 10^4, so 10^5-path runs use the stream generator
    let rng = RngMode::Reference { seed: 2, sampler: SamplerConfig::default() };
    let config = EmulationConfig::new(market, Precision::Unrounded, 100_000, rng);
    let result = simulate(&config).unwrap();
    let price = result.mean_payoff * market.discount();
    let se = result.standard_error() * market.discount();
    let exact = bs_call(100.0, 100.0, 0.05, 0.4, 1.0);
    let elapsed = start.elapsed();
    report(
        2,
        "BSM convergence",
        (price - exact).abs() < 3.0 * se && within(elapsed, 30),
        format!(
            "price {price:.4} vs {exact:.4}, |diff| {:.4} < 3 SE {:.4}, {:.1}s",
            (price - exact).abs(),
            3.0 * se,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_monte_carlo_slope() {
    let start = Instant::now();
    let spec = parse_config(
        "kind = \"paths-sweep\"\nseed = 3\ntrials = 30\n[sweep]\npaths = [100, 1000, 10000, 100000]\n",
    )
    .unwrap();
    let output = run_experiment(&spec).unwrap();
    let slope = output.summary_value("error_slope").unwrap();
    let errors: Vec<String> = output.rows.iter().map(|r| format!("{:.4}", r.mean_abs_error)).collect();
    let elapsed = start.elapsed();
    report(
        3,
        "Monte-Carlo error slope",
        (slope + 0.5).abs() <= 0.1 && within(elapsed, 300),
        format!("slope {slope:.3}, errors {errors:?}, {:.1}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_04_precision_bits() {
    let spec = parse_config(
        "kind = \"bits-sweep\"\nseed = 4\ntrials = 30\npaths = 10000\n[sweep]\nbits = [4, 8, 12, 16]\n",
    )
    .unwrap();
    let output = run_experiment(&spec).unwrap();
    let errors: Vec<f64> = output.rows.iter().map(|r| r.mean_abs_error).collect();
    let biases: Vec<f64> = output.rows.iter().map(|r| r.mean_value - r.reference).collect();
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let reduction = errors[0] / errors[errors.len() - 1];
    report(
        4,
        "precision-bit sweep",
        monotone && reduction >= 10.0,
        format!("errors {errors:.4?}, signed bias {biases:+.4?} over bits [4, 8, 12, 16], reduction {reduction:.1}x"),
    );
}

#[test]
fn criterion_05_time_step_plateau() {
    let spec = parse_config(
        "kind = \"steps-sweep\"\nseed = 5\ntrials = 30\npaths = 10000\n[sweep]\nsteps = [100, 1000]\n",
    )
    .unwrap();
    let output = run_experiment(&spec).unwrap();
    let (a, b) = (&output.rows[0], &output.rows[1]);
    let gap = (a.mean_abs_error - b.mean_abs_error).abs();
    let std = a.std_over_trials.min(b.std_over_trials);
    report(
        5,
        "time-step plateau",
        gap < std,
        format!(
            "error(m=100) {:.4}, error(m=1000) {:.4}, gap {gap:.4} < trial std {std:.4}",
            a.mean_abs_error, b.mean_abs_error
        ),
    );
}

#[test]
fn criterion_06_bins_vs_mc() {
    let spec = parse_config(
        "kind = \"strike-sweep\"\nseed = 6\ntrials = 30\npaths = 10000\n[bins]\nbits = 5\n[sweep]\nstrikes = [80.0, 90.0, 100.0, 110.0, 120.0]\n",
    )
    .unwrap();
    let output = run_experiment(&spec).unwrap();
    let worst = |method: &str| {
        output
            .rows_for(method)
            .iter()
            .map(|r| r.mean_abs_error)
            .fold(0.0, f64::max)
    };
    let (bins, mc) = (worst("bins"), worst("mc"));
    report(
        6,
        "Bins vs MC parity",
        bins <= 3.0 * mc,
        format!("max bins error {bins:.4} <= 3 x max MC error {mc:.4}"),
    );
}

fn draw_dump(sampler: &SamplerConfig) -> String {
    use rayon::prelude::*;
    let rows: Vec<String> = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            (0..100u64)
                .map(|t| format!("{i},{t},{:e}\n", sample_standard(i, t, sampler).unwrap()))
                .collect()
        })
        .collect();
    rows.concat()
}

#[test]
fn criterion_07_rng_distribution() {
    let sampler = SamplerConfig::default();
    let draws: Vec<f64> = (0..1000u64)
        .flat_map(|i| (0..100u64).map(move |t| sample_standard(i, t, &sampler).unwrap()))
        .collect();
    let stats = distribution_report(&draws).unwrap();

    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| draw_dump(&sampler))
    };
    let (one, again, many) = (in_pool(1), in_pool(1), in_pool(6));
    let config = EmulationConfig::new(base_market(), Precision::Unrounded, 20_000, RngMode::Chaos(sampler)).keeping_payoffs();
    let payoff_dump = |threads| format!("{:?}", simulate_with_threads(&config, threads).unwrap().payoffs);
    let deterministic = one == again && one == many && payoff_dump(1) == payoff_dump(5);
    report(
        7,
        "RNG distribution and determinism",
        stats.ks_passes(0.01) && stats.chi_square_passes(0.01) && deterministic,
        format!(
            "KS p {:.3}, chi-square p {:.3}, byte-identical dumps {deterministic}",
            stats.ks_p_value, stats.chi_square_p_value
        ),
    );
}

#[test]
fn criterion_08_qae_scaling() {
    let start = Instant::now();
    let sweep = qae_sweep(&QaeSweepConfig {
        amplitude: 0.3,
        grover_powers: vec![0, 1, 2, 4, 8, 16],
        shots_per_power: 100,
        repetitions: 200,
        seed: 8,
    })
    .unwrap();
    let elapsed = start.elapsed();
    report(
        8,
        "QAE scaling",
        (sweep.slope + 1.0).abs() <= 0.15 && (sweep.baseline_slope + 0.5).abs() <= 0.1 && within(elapsed, 300),
        format!(
            "MLAE slope {:.3}, Bernoulli slope {:.3}, {:.1}s",
            sweep.slope,
            sweep.baseline_slope,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_09_heston_reduction() {
    let mut checked = 0;
    let mut failures = Vec::new();
    // σ² must be exact on the variance grid: σ = 0.5 (ν = 4/16), σ = 0.25 (ν = 1/16)
    for (sigma, spacing) in [(0.5, 1.0 / 16.0), (0.25, 1.0 / 64.0)] {
        for (n, steps, bits) in [(3, 4, 6), (4, 8, 5), (2, 2, 6)] {
            let bsm = MarketConfig::bsm(100.0, 0.05, sigma, 1.0, steps, 100.0);
            let heston = bsm.with_heston(HestonParams {
                kappa: 1.7,
                theta: sigma * sigma,
                xi: 0.0,
                rho: -0.4,
                v0: sigma * sigma,
            });
            let layout = RegisterLayout::new(n, bits, bits, bits, steps);
            let heston_layout = layout.with_heston(6, bits);
            let bsm_circuit = McqpCircuit::new(layout, bsm).unwrap();
            let mut codecs = CodecSet::defaults(&heston, &heston_layout).unwrap();
            codecs.vol = Some(FixedPointCodec::with_spacing(0.0, spacing, 6).unwrap());
            let heston_circuit =
                McqpCircuit::with_codecs(heston_layout, heston, codecs, SamplerConfig::default()).unwrap();
            let statevector_equal = payoff_codes(&bsm_circuit.evolve_to_payoff().unwrap())
                == payoff_codes(&heston_circuit.evolve_to_payoff().unwrap());

            let dump = |market, precision| {
                simulate(&EmulationConfig::new(market, precision, 2000, RngMode::Chaos(SamplerConfig::default())).keeping_payoffs())
                    .unwrap()
                    .payoffs
            };
            let rounded_equal = dump(bsm, Precision::Rounded(bsm_circuit.codecs))
                == dump(heston, Precision::Rounded(codecs));
            let unrounded_equal = dump(bsm, Precision::Unrounded) == dump(heston, Precision::Unrounded);
            checked += 1;
            if !(statevector_equal && rounded_equal && unrounded_equal) {
                failures.push((sigma, n, steps, bits));
            }
        }
    }
    report(
        9,
        "Heston reduction",
        failures.is_empty(),
        format!("{checked} configs at statevector and emulator level, failures {failures:?}"),
    );
}

#[test]
fn criterion_10_risk() {
    let market = base_market();
    let estimate = expiry_threshold_probability(
        &market,
        Precision::Unrounded,
        0.0,
        100_000,
        RngMode::Reference { seed: 10, sampler: SamplerConfig::default() },
    )
    .unwrap();
    let exact = norm_cdf(-0.075);
    let threshold_ok = (estimate.value - exact).abs() < 3.0 * estimate.standard_error;

    let mut nested_failures = Vec::new();
    let mut nested_checked = 0;
    for steps in [2, 4] {
        for bits in [4, 5, 6] {
            let market = MarketConfig::bsm(100.0, 0.05, 0.4, 1.0, steps, 100.0);
            let layout = RegisterLayout::new(2, bits, bits, bits, steps).with_secondary_index(2, bits);
            let circuit = McqpCircuit::new(layout, market).unwrap();
            for epsilon in [0.0, 5.0, 12.0, 20.0, 40.0] {
                let quantum = quantum_nested_pipeline(&circuit, 0.5, epsilon).unwrap();
                let classical = nested_risk_probability(
                    &market,
                    Precision::Rounded(circuit.codecs),
                    &RiskSpec { tau: 0.5, epsilon, outer_paths: 4, inner_paths: 4 },
                    RngMode::Chaos(circuit.sampler),
                )
                .unwrap();
                let below = (quantum.probability * 4.0).round();
                nested_checked += 1;
                if quantum.values != classical.values
                    || below / 4.0 != classical.probability.value
                    || (quantum.probability - below / 4.0).abs() > 1e-12
                {
                    nested_failures.push((steps, bits, epsilon));
                }
            }
        }
    }
    report(
        10,
        "risk threshold and nested equivalence",
        threshold_ok && nested_failures.is_empty(),
        format!(
            "P(S_T > K) {:.4} vs {exact:.4} (3 SE {:.4}); nested {nested_checked} cases, failures {nested_failures:?}",
            estimate.value,
            3.0 * estimate.standard_error
        ),
    );
}

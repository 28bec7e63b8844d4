use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mcqp_core::chaosrng::{sample_standard, Dim, RngMode, SamplerConfig};
use mcqp_core::emulator::{simulate, EmulationConfig, Precision};
use mcqp_core::qae::{mlae_estimate, EstimationSchedule};
use mcqp_core::statevector::McqpCircuit;
use mcqp_core::{CodecSet, MarketConfig, RegisterLayout};

fn market(steps: u64) -> MarketConfig {
    MarketConfig::bsm(100.0, 0.05, 0.4, 1.0, steps, 100.0)
}

fn sampler(c: &mut Criterion) {
    let cfg = SamplerConfig::default();
    let mut group = c.benchmark_group("sampler");
    group.throughput(Throughput::Elements(1000));
    group.bench_function("chaos", |b| {
        b.iter(|| (0..1000u64).map(|i| sample_standard(black_box(i), 7, &cfg).unwrap()).sum::<f64>())
    });
    let reference = RngMode::Reference { seed: 1, sampler: cfg };
    group.bench_function("reference", |b| {
        b.iter(|| {
            let mut source = reference.path_source(black_box(3), 0);
            (0..1000u64).map(|t| source.standard(t, Dim::Price).unwrap()).sum::<f64>()
        })
    });
    group.finish();
}

fn emulator(c: &mut Criterion) {
    let market = market(100);
    let mut group = c.benchmark_group("emulator");
    group.sample_size(10);
    let paths = 10_000;
    group.throughput(Throughput::Elements(paths * market.steps));
    let rounded = Precision::Rounded(CodecSet::uniform(&market, 12).unwrap());
    for (name, precision) in [("unrounded", Precision::Unrounded), ("rounded12", rounded)] {
        for (rng_name, rng) in [
            ("chaos", RngMode::Chaos(SamplerConfig::default())),
            ("reference", RngMode::Reference { seed: 1, sampler: SamplerConfig::default() }),
        ] {
            let config = EmulationConfig::new(market, precision, paths, rng);
            group.bench_function(BenchmarkId::new(name, rng_name), |b| b.iter(|| simulate(&config).unwrap()));
        }
    }
    group.finish();
}

fn statevector(c: &mut Criterion) {
    let mut group = c.benchmark_group("statevector");
    group.sample_size(10);
    for index_bits in [4u32, 8, 12] {
        let circuit = McqpCircuit::new(RegisterLayout::new(index_bits, 8, 8, 8, 10), market(10)).unwrap();
        group.bench_with_input(BenchmarkId::new("pipeline", index_bits), &circuit, |b, circuit| {
            b.iter(|| circuit.run().unwrap())
        });
    }
    group.finish();
}

fn amplitude_estimation(c: &mut Criterion) {
    let schedule = EstimationSchedule::new(vec![0, 1, 2, 4, 8, 16], 100).unwrap();
    c.bench_function("mlae_estimate", |b| b.iter(|| mlae_estimate(black_box(0.3), &schedule, 5).unwrap()));
}

criterion_group!(benches, sampler, emulator, statevector, amplitude_estimation);
criterion_main!(benches);

use mcqp_core::experiments::{parse_config, run_experiment, serialize_spec, spec_hash, strip_nondeterministic, ExperimentSpec};

const SPECS: &[&str] = &[
    "kind = \"price\"\ntrials = 4\npaths = 2000\nprecision_bits = 10\n[market]\nsteps = 20\n",
    "kind = \"price\"\nrng = { mode = \"chaos\" }\ntrials = 3\npaths = 500\n[market]\nsteps = 10\n",
    "kind = \"strike-sweep\"\ntrials = 3\npaths = 1000\n[market]\nsteps = 10\n[sweep]\nstrikes = [90.0, 110.0]\n",
    "kind = \"vol-sweep\"\ntrials = 3\npaths = 1000\n[market]\nsteps = 10\n[sweep]\nsigmas = [0.2, 0.3, 0.5]\n",
    "kind = \"paths-sweep\"\ntrials = 3\n[market]\nsteps = 10\n[sweep]\npaths = [100, 1000]\n",
    "kind = \"steps-sweep\"\ntrials = 2\npaths = 500\n[sweep]\nsteps = [5, 20]\n",
    "kind = \"bits-sweep\"\ntrials = 2\npaths = 500\n[market]\nsteps = 10\n[sweep]\nbits = [4, 8]\n",
    "kind = \"rng-grid\"\n[rng_grid]\nindices = 100\ntime_steps = 20\n",
    "kind = \"qae\"\n[qae]\ngrover_powers = [0, 1, 2]\nrepetitions = 10\n",
    "kind = \"risk\"\ntrials = 2\npaths = 1000\n[market]\nsteps = 10\n[risk]\nepsilons = [0.0, 10.0]\n",
    "kind = \"risk\"\ntrials = 2\n[market]\nsteps = 10\n[risk]\nmode = \"nested-classical\"\nepsilons = [5.0]\nouter_paths = 40\ninner_paths = 8\n",
    "kind = \"risk\"\nrng = { mode = \"chaos\" }\ntrials = 1\nprecision_bits = 4\n[market]\nsteps = 2\n[risk]\nmode = \"nested-quantum\"\nepsilons = [0.0, 12.0]\nouter_paths = 4\ninner_paths = 4\n",
];

fn csv_with_threads(spec: &ExperimentSpec, threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run_experiment(spec).unwrap().to_csv())
}

#[test]
fn every_kind_is_byte_reproducible_across_thread_counts() {
    for text in SPECS {
        let spec = parse_config(text).unwrap();
        let one = csv_with_threads(&spec, 1);
        let many = csv_with_threads(&spec, 5);
        assert_eq!(strip_nondeterministic(&one), strip_nondeterministic(&many), "{text}");
        let again = csv_with_threads(&parse_config(text).unwrap(), 3);
        assert_eq!(strip_nondeterministic(&one), strip_nondeterministic(&again), "{text}");
    }
}

#[test]
fn csv_header_carries_provenance() {
    for text in SPECS {
        let spec = parse_config(text).unwrap();
        let csv = run_experiment(&spec).unwrap().to_csv();
        let hash = spec_hash(&spec);
        assert!(csv.contains(&format!("spec_sha256={hash}")), "{text}");
        for key in ["schema_version=1", "rng_mode=", "generator=", "codecs=", "versions=mcqp-core", "nondeterministic_columns=runtime_ms"] {
            assert!(csv.lines().any(|l| l.starts_with('#') && l.contains(key)), "{key} missing for {text}");
        }
        let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
        assert!(header.split(',').any(|c| c == "runtime_ms"));
        let stripped = strip_nondeterministic(&csv);
        let stripped_header = stripped.lines().find(|l| !l.starts_with('#')).unwrap();
        assert!(!stripped_header.split(',').any(|c| c == "runtime_ms"));
        assert_eq!(
            stripped_header.split(',').count() + 1,
            header.split(',').count()
        );
    }
}

#[test]
fn serialized_specs_reparse_to_the_same_spec() {
    for text in SPECS {
        let spec = parse_config(text).unwrap();
        let reparsed = parse_config(&serialize_spec(&spec)).unwrap();
        assert_eq!(spec, reparsed);
        assert_eq!(spec_hash(&spec), spec_hash(&reparsed));
    }
}

#[test]
fn seed_changes_results_but_not_shape() {
    let base = parse_config(SPECS[0]).unwrap();
    let other = ExperimentSpec { seed: base.seed + 1, ..base.clone() };
    let a = strip_nondeterministic(&run_experiment(&base).unwrap().to_csv());
    let b = strip_nondeterministic(&run_experiment(&other).unwrap().to_csv());
    assert_ne!(a, b);
    assert_eq!(a.lines().count(), b.lines().count());
}

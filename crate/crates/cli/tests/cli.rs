use std::fs;
use std::process::{Command, Output};

fn mcqp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcqp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

/// Data rows of a CSV with `#` metadata lines.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn bs_model_prints_closed_form() {
    let out = mcqp(&["price", "--model", "bs"]);
    assert!(out.status.success());
    let table = rows(&stdout(&out));
    assert_eq!(table[0][0], "model");
    let price: f64 = table[1][1].parse().unwrap();
    assert!((price - 18.0230).abs() < 5e-5, "{price}");
}

#[test]
fn mc_price_independent_of_threads() {
    let base = ["price", "--paths", "5000", "--steps", "20", "--seed", "9"];
    let one = mcqp(&[&base[..], &["--threads", "1"]].concat());
    let four = mcqp(&[&base[..], &["--threads", "4"]].concat());
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
    let other_seed = mcqp(&["price", "--paths", "5000", "--steps", "20", "--seed", "10"]);
    assert_ne!(one.stdout, other_seed.stdout);
}

#[test]
fn payoff_dump_matches_path_count() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("payoffs.csv");
    let out = mcqp(&["price", "--paths", "300", "--steps", "10", "--bits", "8", "--dump-payoffs", dump.to_str().unwrap()]);
    assert!(out.status.success());
    let text = fs::read_to_string(&dump).unwrap();
    assert_eq!(text.lines().count(), 301);
    let mean: f64 = rows(&text)[1..].iter().map(|r| r[1].parse::<f64>().unwrap()).sum::<f64>() / 300.0;
    let table = rows(&stdout(&out));
    let price: f64 = table[1][1].parse().unwrap();
    assert!((mean * (-0.05f64).exp() - price).abs() < 1e-9);
}

#[test]
fn out_flag_writes_file_and_leaves_stdout_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bins.csv");
    let out = mcqp(&["price", "--model", "bins", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(fs::read_to_string(&path).unwrap().contains("bins,"));
}

#[test]
fn experiment_runs_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.toml");
    fs::write(
        &spec,
        "schema_version = 1\nkind = \"paths-sweep\"\ntrials = 3\n[sweep]\npaths = [100, 400]\n[market]\nsteps = 10\n",
    )
    .unwrap();
    let path = spec.to_str().unwrap();
    let first = stdout(&mcqp(&["experiment", path]));
    assert!(first.starts_with('#'));
    assert!(first.contains("paths-sweep"));
    assert_eq!(rows(&first).len(), 3);
    let overridden = stdout(&mcqp(&["experiment", path, "--seed", "77"]));
    let hash = |t: &str| t.lines().find(|l| l.contains("spec_sha256")).map(str::to_owned);
    assert!(hash(&first).is_some());
    assert_ne!(hash(&first), hash(&overridden));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "trails = 3\n").unwrap();
    let invalid = dir.path().join("invalid.toml");
    fs::write(&invalid, "trials = 0\npaths = 0\n").unwrap();
    for args in [
        vec!["experiment", unknown.to_str().unwrap()],
        vec!["experiment", invalid.to_str().unwrap()],
        vec!["experiment", "/definitely/missing.toml"],
        vec!["price", "--sigma", "-1"],
        vec!["price", "--kappa", "2"],
        vec!["price", "--format", "json"],
        vec!["risk", "--mode", "nested-quantum", "--outer", "6", "--inner", "4"],
    ] {
        let out = mcqp(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = mcqp(&["experiment", invalid.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trials") && err.contains("paths"), "{err}");
}

#[test]
fn resource_errors_exit_with_three() {
    for args in [
        vec!["state-dump", "--index-bits", "30"],
        vec!["risk", "--mode", "nested-quantum", "--outer", "64", "--inner", "4", "--steps", "2"],
    ] {
        assert_eq!(mcqp(&args).status.code(), Some(3), "{args:?}");
    }
}

#[test]
fn rng_test_reports_and_dumps_grid() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("draws.csv");
    let out = mcqp(&["rng-test", "--indices", "125", "--steps", "8", "--dump", dump.to_str().unwrap()]);
    assert!(out.status.success());
    let table = rows(&stdout(&out));
    assert_eq!(table[0][0], "count");
    assert_eq!(table[1][0], "1000");
    assert_eq!(fs::read_to_string(&dump).unwrap().lines().count(), 1001);
    let too_small = mcqp(&["rng-test", "--indices", "50", "--steps", "8"]);
    assert_eq!(too_small.status.code(), Some(2));
}

#[test]
fn rng_test_without_remap_rejects_index_zero() {
    let out = mcqp(&["rng-test", "--indices", "5", "--steps", "2", "--no-remap"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn qae_sweep_reports_slopes() {
    let out = mcqp(&["qae-sweep", "--powers", "0,1,2,4", "--repetitions", "30", "--seed", "3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(rows(&text).len(), 5);
    assert!(text.contains("# summary: mlae_slope="));
    assert!(text.contains("# summary: baseline_slope="));
}

#[test]
fn nested_modes_dump_outer_values() {
    let dir = tempfile::tempdir().unwrap();
    let quantum = dir.path().join("quantum.csv");
    let out = mcqp(&[
        "risk", "--mode", "nested-quantum", "--outer", "4", "--inner", "4", "--steps", "2", "--bits", "5",
        "--epsilon", "12", "--dump", quantum.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&quantum).unwrap().lines().count(), 5);
    let p: f64 = rows(&stdout(&out))[1][3].parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(p * 4.0, (p * 4.0).round());

    let classical = dir.path().join("classical.csv");
    let out = mcqp(&[
        "risk", "--mode", "nested-classical", "--outer", "50", "--inner", "20", "--steps", "10",
        "--dump", classical.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(&classical).unwrap().lines().count(), 51);
}

#[test]
fn state_dump_lists_amplitudes() {
    let out = mcqp(&["state-dump", "--index-bits", "2", "--steps", "3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let table = rows(&text);
    assert_eq!(table[0][0], "index_bits");
    let re = table[0].iter().position(|c| c == "amp_re").unwrap();
    let im = table[0].iter().position(|c| c == "amp_im").unwrap();
    let norm: f64 = table[1..]
        .iter()
        .map(|r| r[re].parse::<f64>().unwrap().powi(2) + r[im].parse::<f64>().unwrap().powi(2))
        .sum();
    assert!((norm - 1.0).abs() < 1e-12);
    assert!(text.contains("# summary: option_price="));
}

//! Maximum-likelihood amplitude estimation over the pricing state.
//!
//! The Grover iterate is available in closed form and as literal reflections
//! on a [`QState`]; both give the good-state probability
//! `sin²((2q+1)·asin(√a))` after `q` iterations.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaosrng::mix_seed;
use crate::error::{domain, McqpError, Result};
use crate::statevector::{QState, Register};

/// Likelihood grid points on `[0, 1]`.
pub const GRID_POINTS: usize = 1 << 14;

const GOLDEN_ITERATIONS: usize = 60;

/// Good-state probability after `power` Grover iterations.
pub fn grover_probability(a: f64, power: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return domain(format!("amplitude probability must lie in [0, 1], got {a}"));
    }
    Ok(grover_probability_unchecked(a, power))
}

fn grover_probability_unchecked(a: f64, power: u64) -> f64 {
    let theta = a.sqrt().asin();
    ((2 * power + 1) as f64 * theta).sin().powi(2)
}

fn is_good(state: &QState, key: u128) -> bool {
    state.get(key, Register::Ancilla) == 1
}

/// One Grover iterate `(2|ψ⟩⟨ψ| − I)·S_χ` applied to `state`, where `S_χ`
/// flips the sign of ancilla-|1⟩ components.
pub fn apply_grover(psi: &QState, state: &QState) -> QState {
    let flipped = state.phase_where(|k| is_good(state, k), Complex64::new(-1.0, 0.0));
    let overlap = psi.inner(&flipped);
    psi.combine(2.0 * overlap, &flipped, Complex64::new(-1.0, 0.0))
}

/// `Q^power |ψ⟩`.
pub fn grover_power_state(psi: &QState, power: u64) -> QState {
    let mut state = psi.clone();
    for _ in 0..power {
        state = apply_grover(psi, &state);
    }
    state
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimationSchedule {
    pub grover_powers: Vec<u64>,
    pub shots_per_power: u64,
}

impl EstimationSchedule {
    pub fn new(grover_powers: Vec<u64>, shots_per_power: u64) -> Result<Self> {
        let schedule = Self {
            grover_powers,
            shots_per_power,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots_per_power == 0 {
            return domain("shots_per_power must be positive");
        }
        if self.grover_powers.first() != Some(&0) {
            return domain("schedule must start with power 0");
        }
        if self.grover_powers.windows(2).any(|w| w[0] >= w[1]) {
            return domain("grover powers must be strictly ascending");
        }
        Ok(())
    }

    /// Total oracle calls `Σ shots·(2q+1)`.
    pub fn budget(&self) -> u64 {
        self.grover_powers
            .iter()
            .map(|q| self.shots_per_power * (2 * q + 1))
            .sum()
    }
}

/// Shot outcomes per Grover power.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowerCounts {
    pub power: u64,
    pub shots: u64,
    pub hits: u64,
}

/// Binomial counts per power. Each power draws from its own stream keyed by
/// `(seed, power)`.
pub fn sample_counts(probabilities: &[(u64, f64)], shots: u64, seed: u64) -> Result<Vec<PowerCounts>> {
    probabilities
        .iter()
        .map(|&(power, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, power));
            let binomial = Binomial::new(shots, p.clamp(0.0, 1.0))
                .map_err(|e| McqpError::Domain(format!("binomial({shots}, {p}): {e}")))?;
            Ok(PowerCounts {
                power,
                shots,
                hits: binomial.sample(&mut rng),
            })
        })
        .collect()
}

fn log_likelihood(counts: &[PowerCounts], a: f64) -> f64 {
    counts
        .iter()
        .map(|c| {
            let p = grover_probability_unchecked(a, c.power);
            let misses = c.shots - c.hits;
            let hit_term = if c.hits > 0 { c.hits as f64 * p.ln() } else { 0.0 };
            let miss_term = if misses > 0 {
                misses as f64 * (1.0 - p).ln()
            } else {
                0.0
            };
            hit_term + miss_term
        })
        .sum()
}

/// Maximise the joint likelihood by a dense grid followed by golden-section
/// refinement around the best grid point.
pub fn mlae_from_counts(counts: &[PowerCounts]) -> f64 {
    let mut sorted = counts.to_vec();
    sorted.sort_by_key(|c| (c.power, c.shots, c.hits));
    let step = 1.0 / GRID_POINTS as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..=GRID_POINTS {
        let value = log_likelihood(&sorted, j as f64 * step);
        if value > best.1 {
            best = (j, value);
        }
    }
    let lo = best.0.saturating_sub(1) as f64 * step;
    let hi = ((best.0 + 1).min(GRID_POINTS)) as f64 * step;
    let refined = golden_section_max(|a| log_likelihood(&sorted, a), lo, hi);
    if log_likelihood(&sorted, refined) > best.1 {
        refined
    } else {
        best.0 as f64 * step
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Estimate `a` from synthetic shots at the exact Grover probabilities.
pub fn mlae_estimate(a: f64, schedule: &EstimationSchedule, seed: u64) -> Result<f64> {
    schedule.validate()?;
    let probabilities = schedule
        .grover_powers
        .iter()
        .map(|&q| grover_probability(a, q).map(|p| (q, p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mlae_from_counts(&sample_counts(&probabilities, schedule.shots_per_power, seed)?))
}

/// Estimate the ancilla-|1⟩ probability of `psi`, measuring shots on the
/// literal Grover-power states.
pub fn mlae_estimate_state(psi: &QState, schedule: &EstimationSchedule, seed: u64) -> Result<f64> {
    schedule.validate()?;
    let mut probabilities = Vec::with_capacity(schedule.grover_powers.len());
    let mut state = psi.clone();
    let mut applied = 0;
    for &q in &schedule.grover_powers {
        while applied < q {
            state = apply_grover(psi, &state);
            applied += 1;
        }
        probabilities.push((q, state.ancilla_one_probability()));
    }
    Ok(mlae_from_counts(&sample_counts(&probabilities, schedule.shots_per_power, seed)?))
}

/// Least-squares slope of `log10 y` against `log10 x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return domain("slope fit needs at least two paired points");
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return domain("log-log fit needs positive values");
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.log10()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log10()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return domain("slope fit needs distinct x values");
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaeSweepConfig {
    pub amplitude: f64,
    /// Full schedule; the sweep evaluates each prefix that ends at a power.
    pub grover_powers: Vec<u64>,
    pub shots_per_power: u64,
    pub repetitions: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaeSweepPoint {
    pub max_power: u64,
    pub budget: u64,
    pub rmse: f64,
    /// RMSE of plain Bernoulli sampling at the same budget.
    pub baseline_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaeSweep {
    pub points: Vec<QaeSweepPoint>,
    pub slope: f64,
    pub baseline_slope: f64,
}

impl QaeSweep {
    pub fn csv_header() -> &'static str {
        "max_power,budget,rmse,baseline_rmse"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| format!("{},{},{:.17e},{:.17e}", p.max_power, p.budget, p.rmse, p.baseline_rmse))
            .collect()
    }
}

fn rmse(estimates: &[f64], truth: f64) -> f64 {
    (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64).sqrt()
}

/// RMSE of MLAE and of the Bernoulli baseline at each schedule prefix.
/// Repetition `r` of prefix `k` uses seed `mix_seed(seed, r)` for every
/// prefix, so prefixes share their lower-power shots.
pub fn qae_sweep(config: &QaeSweepConfig) -> Result<QaeSweep> {
    EstimationSchedule::new(config.grover_powers.clone(), config.shots_per_power)?;
    if config.repetitions == 0 {
        return domain("repetitions must be positive");
    }
    grover_probability(config.amplitude, 0)?;
    let mut points = Vec::new();
    for k in 1..=config.grover_powers.len() {
        let schedule = EstimationSchedule::new(config.grover_powers[..k].to_vec(), config.shots_per_power)?;
        let budget = schedule.budget();
        let baseline = EstimationSchedule::new(vec![0], budget)?;
        let (estimates, baseline_estimates): (Vec<f64>, Vec<f64>) = (0..config.repetitions)
            .into_par_iter()
            .map(|r| {
                let seed = mix_seed(config.seed, r);
                Ok((
                    mlae_estimate(config.amplitude, &schedule, seed)?,
                    mlae_estimate(config.amplitude, &baseline, mix_seed(seed, u64::MAX))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        points.push(QaeSweepPoint {
            max_power: *schedule.grover_powers.last().unwrap(),
            budget,
            rmse: rmse(&estimates, config.amplitude),
            baseline_rmse: rmse(&baseline_estimates, config.amplitude),
        });
    }
    let budgets: Vec<f64> = points.iter().map(|p| p.budget as f64).collect();
    let errors: Vec<f64> = points.iter().map(|p| p.rmse).collect();
    let baseline_errors: Vec<f64> = points.iter().map(|p| p.baseline_rmse).collect();
    Ok(QaeSweep {
        slope: fit_loglog_slope(&budgets, &errors)?,
        baseline_slope: fit_loglog_slope(&budgets, &baseline_errors)?,
        points,
    })
}

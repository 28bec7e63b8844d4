//! Monte-Carlo option pricing in quantum parallel.
//!
//! Two simulation levels share one set of register semantics:
//!
//! * [`statevector`] evolves a sparse quantum state whose index register
//!   labels independent paths, applying the random-number, time-step,
//!   payoff and mean-encoding operators as basis-state rewrites.
//! * [`emulator`] runs the same fixed-precision arithmetic path by path and
//!   scales to millions of paths.
//!
//! For small registers the two agree bit for bit. [`analytic`] supplies
//! closed-form oracles, [`qae`] amplitude estimation, [`risk`] threshold and
//! nested valuation, and [`experiments`] the reproducible sweep harness.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod chaosrng;
pub mod emulator;
pub mod error;
pub mod experiments;
pub mod fixedpoint;
pub mod market;
pub mod qae;
pub mod risk;
pub mod statevector;

pub use error::{McqpError, Result};
pub use fixedpoint::{layout_width, FixedPointCodec, RegisterLayout};
pub use market::{CodecSet, HestonParams, MarketConfig};

//! Markov-switching non-linear autoregressive models: simulation,
//! kernel regression per regime, exact restoration of hidden regimes and
//! a Robbins-Monro estimator for the hidden case.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod funcgrammar;
pub mod kernelsmooth;
pub mod model;
pub mod numeric;
pub mod restoration;
pub mod rmfit;

pub use error::{Error, Result};
pub use kernelsmooth::{EvalGrid, Kernel};
pub use model::{simulate, ModelSpec, Series, TransitionMatrix};
pub use rmfit::{rm_run, FitReport, RMConfig};

/// Float formatting for every file this crate writes: 17 significant
/// digits, so values round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

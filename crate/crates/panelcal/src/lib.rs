//! Calibrated multi-judge evaluation.
//!
//! A panel of noisy judges votes on labeled pairwise comparisons; this crate
//! turns those votes into calibrated probabilities and compares panel-curation
//! strategies against full-panel inclusion. The pipeline has four steps:
//!
//! 1. **Aggregate** ([`aggregate`]) — map a panel's verdicts to a raw
//!    probability per item (majority vote, accuracy-weighted, log-odds,
//!    Bayesian one-coin, Dawid–Skene EM).
//! 2. **Residual correction** ([`calibrate`]) — affine logit correction fit
//!    on calibration labels.
//! 3. **Distribution calibration** ([`calibrate`]) — Platt, temperature,
//!    isotonic, or elastic-net-regularized beta calibration.
//! 4. **Conformal sets** ([`conformal`]) — split conformal prediction sets
//!    with finite-sample marginal coverage.
//!
//! Supporting modules: [`metrics`] (proper scoring rules, ECE, AUAC,
//! reliability bins), [`curate`] (top-k, family dedup, greedy/beam/backward/
//! exhaustive subset search, L1 curator, scope diagnostics), [`infer`]
//! (paired permutation tests, bootstrap CIs, Gaussian multiplier joint test,
//! TOST), [`theory`] (exact oracle risks, jury bounds, Hoeffding exponents,
//! synthetic panel generator), [`irt`] (2PL fit and variance decomposition),
//! [`parse`] (four-level verdict parser), and [`experiment`] (the experiment
//! harness behind the CLI).
//!
//! Everything is deterministic given a master seed: all randomness flows
//! through seeds derived with [`data::mix_seed`].

pub mod aggregate;
pub mod calibrate;
pub mod conformal;
pub mod curate;
pub mod data;
pub mod experiment;
pub mod infer;
pub mod io;
pub mod irt;
pub mod metrics;
mod opt;
pub mod parse;
pub mod theory;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A guard against infeasible computation sizes fired.
    #[error("guard: {0}")]
    Guard(String),
    /// Configuration problems, all collected in one pass.
    #[error("invalid config:\n{}", .0.join("\n"))]
    Config(Vec<String>),
    /// Malformed or inconsistent data files.
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

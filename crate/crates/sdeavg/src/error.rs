//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("averaging horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:.6e} below -{tolerance:.3e}")]
    NotPositiveSemidefinite { eigenvalue: f64, tolerance: f64 },

    #[error("oscillation frequencies must be strictly positive and pairwise distinct (offending frequency {0})")]
    InvalidFrequency(f64),

    #[error("no contraction: theta' = {theta_prime} >= 1, the mean-square moment bound does not exist")]
    NoContraction { theta_prime: f64 },

    #[error("path {path} diverged at step {step} (non-finite state)")]
    Divergence { path: usize, step: usize },

    #[error("time grids of the two ensembles differ")]
    GridMismatch,

    #[error("ensembles have different sample counts ({0} vs {1})")]
    SampleCountMismatch(usize, usize),

    #[error("ensemble size {0} exceeds the exact-assignment cap of {1} paths")]
    EnsembleTooLarge(usize, usize),

    #[error("self-distance baseline needs two distinct seeds, both were {0}")]
    IdenticalSeeds(u64),

    #[error("inadmissible Novikov parameter c = {c}: must exceed {lower_bound} for p = {p}")]
    InadmissibleNovikovC { p: f64, c: f64, lower_bound: f64 },

    #[error("Gronwall hypothesis violated: beta = {beta} must be smaller than every decay rate (min delta = {min_delta})")]
    GronwallHypothesis { beta: f64, min_delta: f64 },

    #[error("diffusion must be additive (state-independent) for the Gaussian moment oracle")]
    NonAdditiveDiffusion,

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for a single-message configuration error.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }
}

//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0} is not prime; MUB construction requires a prime dimension")]
    NotPrime(usize),

    #[error("matrix is not Hermitian: max |M - M^dag| = {deviation:.3e}")]
    NotHermitian { deviation: f64 },

    #[error("matrix has eigenvalue {0:.3e} below the PSD clip threshold")]
    NegativeEigenvalue(f64),

    #[error("state is not normalized: |psi| = {0}")]
    NotNormalized(f64),

    #[error("probability {0} outside [0, 1]")]
    ProbabilityRange(f64),

    #[error("survival probability {0} is non-physical")]
    NonPhysicalProbability(f64),

    #[error(
        "operator ({k},{l}) has no design image on state ({j},{m}): \
         best overlap modulus {best:.6}"
    )]
    NoCovarianceImage {
        k: usize,
        l: usize,
        j: usize,
        m: usize,
        best: f64,
    },

    #[error("sample plan is empty")]
    EmptyPlan,

    #[error("invalid coefficient index ({row},{col}) for a {dim}x{dim} process matrix")]
    InvalidIndex { row: usize, col: usize, dim: usize },

    #[error("dataset is missing a required setting: {0}")]
    MissingSetting(String),

    #[error("operator bases do not match: {0}")]
    BasisMismatch(String),

    #[error("linear system is rank deficient: rank {rank} < {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

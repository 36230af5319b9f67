//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while assembling states, integrating them, or
/// running a study.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate mode label `{0}`")]
    DuplicateMode(String),
    #[error("unknown mode label `{0}`")]
    UnknownMode(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hermitian (max asymmetry {max_dev:.3e})")]
    NotHermitian { max_dev: f64 },
    #[error("matrix is not positive definite (pivot {pivot} = {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not positive semidefinite (pivot {pivot} = {value:.3e})")]
    NotPositiveSemidefinite { pivot: usize, value: f64 },
    #[error("singular matrix (|det| = {det_mag:.3e})")]
    SingularMatrix { det_mag: f64 },
    #[error("ill-conditioned matrix (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("too many quadratic forms for one moment integral ({count} > {max})")]
    TooManyForms { count: usize, max: usize },
    #[error("mode `{0}` carries {1} integration treatments; each mode needs exactly one")]
    BadFactorCoverage(String, usize),
    #[error("result expected real but has imaginary part {im:.3e} (|re| = {re:.3e})")]
    NotReal { re: f64, im: f64 },
    #[error("normalization weight is not a positive real ({value})")]
    BadWeight { value: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("internal symmetry check failed: {0}")]
    SymmetryBroken(String),
    #[error("no positive rate anywhere in the search range [{lo:.3e}, {hi:.3e}]")]
    NoPositiveRate { lo: f64, hi: f64 },
    #[error("no sign change in [{lo_km:.1} km, {hi_km:.1} km]: {what}")]
    NoCrossover { lo_km: f64, hi_km: f64, what: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

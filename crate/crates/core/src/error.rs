use thiserror::Error;

/// Errors raised by the library. Every fallible operation returns [`Result`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("rank {rank} too large for ambient dimension {dim} ({why})")]
    RankTooLarge { rank: usize, dim: usize, why: &'static str },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("columns are not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("coefficients must have unit norm, got sum of squares {sum_sq}")]
    CoefficientNorm { sum_sq: f64 },
    #[error("mixture weights invalid: {0}")]
    MixtureWeights(String),
    #[error("eps must be finite and non-negative, got {0}")]
    InvalidEps(f64),
    #[error("prompt is empty (norm_len = 0)")]
    EmptyPrompt,
    #[error("covariance is singular or not positive definite")]
    SingularCovariance,
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("zero-rank subspace")]
    ZeroRank,
    #[error("expression diverges: {0}")]
    Diverges(String),
    #[error("non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("factor is numerically rank deficient: rank {found} < {wanted}")]
    RankDeficient { found: usize, wanted: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("integration exceeded {steps} steps at t = {t}")]
    TooManySteps { t: f64, steps: usize },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("tolerance failure at t = {t}: {what}")]
    ToleranceFailure { t: f64, what: String },

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("decomposition is not biorthogonal (residual {residual:.3e})")]
    NotBiorthogonal { residual: f64 },

    #[error("rank-deficient design matrix (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("extrapolation did not converge (residual {residual:.3e})")]
    Extrapolation { residual: f64 },

    #[error("ambiguous mode matching at N = {n}: candidates {candidates:?}")]
    AmbiguousModes { n: u32, candidates: Vec<(f64, f64)> },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure came from the numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepSizeUnderflow { .. }
                | Error::TooManySteps { .. }
                | Error::NonFinite { .. }
                | Error::ToleranceFailure { .. }
                | Error::Eigensolver(_)
                | Error::NotBiorthogonal { .. }
                | Error::RankDeficient { .. }
                | Error::Extrapolation { .. }
                | Error::AmbiguousModes { .. }
                | Error::Analysis(_)
        )
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coherent amplitude |alpha|^2 = {alpha_sq} exceeds truncation bound {limit} (N_cut/4)")]
    TruncationOverflow { alpha_sq: f64, limit: f64 },

    #[error("unknown subsystem label `{0}`")]
    UnknownLabel(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operands live on different Hilbert spaces")]
    SpaceMismatch,

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dispersive Hamiltonian undefined: delta1 + delta2 = 0")]
    DegenerateDetuning,

    #[error("adaptive step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("numerical invariant violated: {0}")]
    InvariantViolation(String),

    #[error("positivity breakdown at t = {t}: min eigenvalue {min_eigenvalue:e}; reduce the step size")]
    PositivityBreakdown { t: f64, min_eigenvalue: f64 },

    #[error("series sampled on different grids ({left} vs {right} points)")]
    GridMismatch { left: usize, right: usize },

    #[error("model is not block structured under the supplied charge: {0}")]
    NotChargeConserving(String),

    #[error("search bounds violated: {0}")]
    BoundViolation(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors that stem from a numerical invariant failing rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepSizeUnderflow { .. }
                | Error::InvariantViolation(_)
                | Error::PositivityBreakdown { .. }
        )
    }
}

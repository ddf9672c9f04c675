use thiserror::Error;

/// Errors raised by the simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: Fock cutoff must be at least 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("Fock cutoff {dim} too small: {reason}")]
    CutoffTooSmall { dim: usize, reason: String },

    #[error("matrix is not Hermitian (max |H - H^dag| = {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no lattice term survives the envelope cut (delta = {delta}, tol = {tol})")]
    DegenerateEnvelope { delta: f64, tol: f64 },

    #[error("codewords are collinear (smallest Gram eigenvalue {0:.3e}); envelope too wide")]
    CodewordsCollinear(f64),

    #[error("calibration failed for target nbar {target}: {reason}")]
    CalibrationFailed { target: f64, reason: String },

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("physical bounds violated: {0}")]
    BoundsViolation(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("insufficient data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

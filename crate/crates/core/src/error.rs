use thiserror::Error;

pub type Result<T> = std::result::Result<T, MygaError>;

#[derive(Debug, Error)]
pub enum MygaError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("not a probability distribution (sum {sum}, min entry {min})")]
    SimplexViolation { sum: f64, min: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("majority arms carry zero mass; truncation is undefined")]
    ZeroMajorityMass,

    #[error("fixed point residual {residual:e} exceeds tolerance")]
    ResidualExceeded { residual: f64 },

    #[error("no linear piece of the two-arm map yields a consistent fixed point")]
    NoConsistentPiece,

    #[error("played arm {arm} has zero probability")]
    ZeroProbabilityArm { arm: usize },

    #[error("round mismatch: state expects round {expected}, trace is round {found}")]
    RoundMismatch { expected: u64, found: u64 },

    #[error("round {t} outside horizon 1..={horizon}")]
    RoundOutOfRange { t: u64, horizon: u64 },

    #[error("replay file line {line}: {message}")]
    Replay { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

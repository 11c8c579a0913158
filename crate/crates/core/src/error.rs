use thiserror::Error;

/// Errors raised by the design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("hole geometry invalid: {0}")]
    Overlap(String),
    #[error("grid too coarse: {0}")]
    Resolution(String),
    #[error("plane-wave cutoff exceeds grid Nyquist limit: {0}")]
    Cutoff(String),
    #[error("eigensolver failed: {0}")]
    Convergence(String),
    #[error("no plateau satisfies the 15% group-index criterion")]
    NoPlateau,
    #[error("angular momentum domain error: {0}")]
    Domain(String),
    #[error("frequency too close to an atomic resonance: {0}")]
    Resonance(String),
    #[error("group velocity vanishes: {0}")]
    ZeroVg(String),
    #[error("no trapping minimum: {0}")]
    NoMinimum(String),
    #[error("permittivity table too narrow: {0}")]
    TableRange(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class: 2 config, 3 numeric, 4 physics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Overlap(_) | Error::Resolution(_) | Error::Domain(_) | Error::Io(_) => 2,
            Error::Cutoff(_) | Error::Convergence(_) | Error::ZeroVg(_) | Error::TableRange(_) | Error::Resonance(_) => 3,
            Error::NoPlateau | Error::NoMinimum(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

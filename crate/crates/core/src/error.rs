use std::path::PathBuf;

/// Coarse failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: malformed files, violated preconditions, invalid designs.
    Config,
    /// A numerical procedure failed (instability, non-convergence, no root).
    Numerical,
    /// An iterative procedure ran out of budget before converging.
    Budget,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Numerical => "numerical",
            ErrorClass::Budget => "budget",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("no guided mode: {0}")]
    NoGuidedMode(String),

    #[error("simulation unstable at step {step}: |field| = {magnitude:e} exceeds {limit:e}")]
    Unstable { step: usize, magnitude: f64, limit: f64 },

    #[error("signal supports at most {supported} modes, {requested} requested")]
    RankDeficient { supported: usize, requested: usize },

    #[error("energy trace is not a single exponential (log-fit rms residual {residual:.3e})")]
    NotSingleExponential { residual: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e}, last iterate {last_iterate:?})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("root bracket failed: {0}")]
    NoBracket(String),

    #[error("no photonic band gap: {0}")]
    NoBandGap(String),

    #[error("eigensolver failed at k = ({kx:.6}, {ky:.6})")]
    Eigensolver { kx: f64, ky: f64 },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_) | Error::Io { .. } | Error::Parse { .. } => ErrorClass::Config,
            Error::RankDeficient { .. } | Error::Degenerate(_) => ErrorClass::Config,
            Error::NoConvergence { .. } => ErrorClass::Budget,
            Error::NoGuidedMode(_)
            | Error::Unstable { .. }
            | Error::NotSingleExponential { .. }
            | Error::NoBracket(_)
            | Error::NoBandGap(_)
            | Error::Eigensolver { .. } => ErrorClass::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

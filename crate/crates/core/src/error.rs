use thiserror::Error;

/// Errors raised by the emulator pipeline.
///
/// Variants split into input problems (bad data, bad configuration) and
/// numeric failures (factorizations, solvers, samplers); the CLI maps the
/// two groups onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input outside the unit domain: {0}")]
    OutOfDomain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no observations")]
    NoObservations,

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("constraint system is rank deficient (rank {rank} < {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("rejection sampler accepted {accepted} of {proposals} proposals, below the {min_rate:e} floor")]
    LowAcceptance {
        accepted: u64,
        proposals: u64,
        min_rate: f64,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by user input rather than numerical trouble.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::InvalidArgument(_)
                | Error::OutOfDomain(_)
                | Error::Parse { .. }
                | Error::NoObservations
                | Error::Version { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

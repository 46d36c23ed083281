use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: expected N={expected}, got N={found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("spectrum is not Hermitian-symmetric (max asymmetry {0:e})")]
    NonHermitianInput(f64),

    #[error("Poisson right-hand side has nonzero mean {0:e}")]
    NonZeroMeanRhs(f64),

    #[error("relaxation parameter {0} outside [0, 1]")]
    ChiOutOfRange(f64),

    #[error("fine grid N={fine} is not an integer multiple of coarse grid N={coarse}")]
    RatioMismatch { fine: usize, coarse: usize },

    #[error("trajectory {trajectory} has {found} usable snapshots, need at least 2")]
    InsufficientSnapshots { trajectory: usize, found: usize },

    #[error("snapshot matrices contain no columns")]
    EmptySnapshots,

    #[error("time grids are misaligned: {0}")]
    GridMisaligned(String),

    #[error("need at least 2 samples for ensemble statistics, got {0}")]
    TooFewSamples(usize),

    #[error("no reference enstrophy series for seed {0}")]
    MissingReference(u64),

    #[error("method requires a filter file but none was found at {0}")]
    FilterMissing(PathBuf),

    #[error("numerical blow-up at step {step} (last finite state at t = {last_valid_time})")]
    NumericalBlowup { step: usize, last_valid_time: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalBlowup { .. } => 3,
            Error::Io { .. } | Error::Format { .. } | Error::FilterMissing(_) => 4,
            _ => 2,
        }
    }
}

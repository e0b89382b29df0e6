use thiserror::Error;

/// Errors raised across the library.
///
/// The CLI maps [`Error::Config`] to exit code 2 and the numerical variants
/// ([`Error::Estimation`], [`Error::Training`]) to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's preconditions (shapes, stages, counts).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid array, scenario or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A DOA estimator could not produce an estimate.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Network training diverged. The loss history up to the failure is kept.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Training { epoch: usize, history: Vec<f64> },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Estimation(_) | Error::Training { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

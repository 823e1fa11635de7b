use std::io;

/// Failure kinds shared by every layer of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Input data is malformed (non-finite coordinates, bad labels, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// The operation is not valid in the current state of the object.
    #[error("invalid state: {0}")]
    InvalidState(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;

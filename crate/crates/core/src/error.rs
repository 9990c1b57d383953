//! Crate-wide error type.
//!
//! Every variant maps onto one documented process exit code (see
//! [`Error::exit_code`]) so the command-line front end can report failures
//! by class.

use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter, configuration value or precondition was out of range.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor shapes did not line up.
    #[error("shape error: {0}")]
    Shape(String),

    #[error("unsupported transform size {0}: length must be a power of two")]
    UnsupportedSize(usize),

    #[error("simulation blew up at sample {index}: |x| = {excursion_mm} mm")]
    SimulationBlowUp { index: usize, excursion_mm: f64 },

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("degenerate channel {0}: zero variance")]
    DegenerateChannel(usize),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr = {lr})")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("calibration incomplete: {0}")]
    CalibrationIncomplete(String),

    #[error("integer overflow: {0}")]
    Overflow(String),

    /// The model layout does not support the requested transformation.
    #[error("structural error: {0}")]
    Structural(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code for this error class.
    ///
    /// | code | class |
    /// |------|-------|
    /// | 2 | usage (emitted by the argument parser) |
    /// | 3 | validation / configuration |
    /// | 4 | I/O |
    /// | 5 | corrupt or version-mismatched file |
    /// | 6 | numerical failure (blow-up, non-finite loss, no signal, degenerate data) |
    /// | 7 | structural / shape / state / calibration / overflow |
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::EmptyDataset(_) => 3,
            Error::Io(_) => 4,
            Error::Corrupt(_) | Error::Version { .. } => 5,
            Error::SimulationBlowUp { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NoSignal(_)
            | Error::DegenerateChannel(_) => 6,
            Error::Shape(_)
            | Error::UnsupportedSize(_)
            | Error::State(_)
            | Error::CalibrationIncomplete(_)
            | Error::Overflow(_)
            | Error::Structural(_) => 7,
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

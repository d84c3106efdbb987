//! Error type shared by every fallible operation in the crate.

use alloc::string::String;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, CoreError>;

/// All failure modes of the numeric core and the model built on it.
///
/// Every variant carries enough context to identify the failing
/// operation without a debugger; messages are single-line.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand shapes are incompatible with the requested operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// A computed value was NaN or infinite. Carries the operation that
    /// produced it so divergence can be localized.
    NonFinite { op: &'static str },
    /// A `Var` from one graph was used with another graph.
    GraphMismatch { op: &'static str },
    /// Invalid configuration or argument value.
    InvalidArgument { op: &'static str, detail: String },
    /// A named parameter was registered twice or looked up and missing.
    Parameter { detail: String },
    /// Two evaluations of a supposedly deterministic function differed.
    NonDeterministic { detail: String },
    /// The requested construction cannot be satisfied (e.g. a scene
    /// scenario with too few shapes).
    Unsatisfiable { detail: String },
    /// Streams/banks observed out-of-order or duplicate frame indices.
    OutOfOrder { detail: String },
    /// Training diverged (non-finite loss); parameters were rolled back.
    Diverged { step: usize },
}

impl core::fmt::Display for CoreError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            CoreError::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            CoreError::GraphMismatch { op } => {
                write!(f, "variable used with a different graph in {op}")
            }
            CoreError::InvalidArgument { op, detail } => {
                write!(f, "invalid argument to {op}: {detail}")
            }
            CoreError::Parameter { detail } => write!(f, "parameter error: {detail}"),
            CoreError::NonDeterministic { detail } => {
                write!(f, "non-deterministic evaluation: {detail}")
            }
            CoreError::Unsatisfiable { detail } => write!(f, "unsatisfiable request: {detail}"),
            CoreError::OutOfOrder { detail } => write!(f, "out-of-order input: {detail}"),
            CoreError::Diverged { step } => {
                write!(f, "training diverged at step {step}; parameters rolled back")
            }
        }
    }
}

impl core::error::Error for CoreError {}

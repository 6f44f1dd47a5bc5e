//! Error type shared by all core operations.

use core::fmt;

/// Errors raised by core operations. Validation failures carry enough
/// context to tell which table and which entry violated a contract.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// An index (state, action, step, task) is out of range.
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    /// Two inputs that must agree on dimensions do not.
    ShapeMismatch { what: &'static str },
    /// A row that must be a probability distribution is not (within the
    /// stated tolerance). `deviation` is the observed defect.
    InvalidDistribution {
        what: &'static str,
        index: usize,
        deviation: f64,
    },
    /// A scalar parameter is outside its admissible range.
    InvalidValue { what: &'static str },
    /// A randomized constructive scheme exhausted its retry budget.
    GenerationFailed { what: &'static str },
    /// A measured family constant is unusable (e.g. an unreachable state
    /// makes the reachability lower bound zero). Regenerate the family.
    ConstantsError { what: &'static str },
    /// Joint MLE eliminated every candidate for some task: the model class
    /// is inconsistent with the recorded data.
    MleInconsistent { task: usize, step: usize },
    /// A numerical operation produced a non-finite value.
    Numerical { what: &'static str, step: usize },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::IndexOutOfRange { what, index, len } => {
                write!(f, "{what}: index {index} out of range (len {len})")
            }
            CoreError::ShapeMismatch { what } => write!(f, "shape mismatch: {what}"),
            CoreError::InvalidDistribution {
                what,
                index,
                deviation,
            } => write!(
                f,
                "{what}: row {index} is not a probability distribution (deviation {deviation:e})"
            ),
            CoreError::InvalidValue { what } => write!(f, "invalid value: {what}"),
            CoreError::GenerationFailed { what } => {
                write!(f, "generation failed after bounded retries: {what}")
            }
            CoreError::ConstantsError { what } => {
                write!(f, "family constants unusable: {what}")
            }
            CoreError::MleInconsistent { task, step } => write!(
                f,
                "joint MLE: every candidate eliminated for task {task} at step {step}"
            ),
            CoreError::Numerical { what, step } => {
                write!(f, "numerical failure at step {step}: {what}")
            }
        }
    }
}

impl core::error::Error for CoreError {}

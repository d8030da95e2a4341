//! Token-driven execution of a workflow.
//!
//! [`unfold_plan`] fixes the scatter depth of every step and classifies each
//! edge as element-wise, broadcast, gather or scatter. The executor then fires
//! a step instance as soon as every input port holds a token for its tag.

mod executor;
mod ops;
mod plan;
mod token;

use thiserror::Error;

pub use executor::{execute, RunOptions, RunOutcome, RunStatus, SetupError};
pub use ops::{dot_cross_product, gather_collect, scatter_expand, Expansion};
pub use plan::{unfold_plan, EdgeClass, EdgePlan, LevelId, StepPlan, UnfoldedPlan};
pub use token::{Payload, PortKey, Tag, Token};

#[derive(Debug, Error)]
pub enum DataflowError {
    #[error("workflow does not validate: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("dependency cycle among {}", .0.join(", "))]
    Cycle(Vec<String>),
    #[error("inconsistent scatter nesting at step `{step}`: {message}")]
    InconsistentNesting { step: String, message: String },
    #[error("cannot scatter {port} at {tag}: payload is not a list")]
    NotAList { port: String, tag: String },
    #[error("dot scatter over lists of different lengths ({left} vs {right})")]
    DotLengthMismatch { left: usize, right: usize },
    #[error("gather failed: {0}")]
    Gather(String),
}

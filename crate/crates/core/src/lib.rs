//! Proactive chit-chat to task-oriented switching: a transition info extractor,
//! a prompt-conditioned transition sentence generator with adapters, template
//! augmentation, the batch/live pipeline and its evaluation metrics.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod templates;
pub mod tie;
pub mod tsg;
pub mod checkpoint;

pub use error::{Error, Result};

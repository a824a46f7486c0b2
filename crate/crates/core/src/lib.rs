//! Emotional reply generation anchored on two keywords.
//!
//! Given a post, an emotion keyword and a topic keyword are predicted first;
//! a three-stage GRU decoder then grows the reply outward from both keywords
//! (emotion-side draft, attended middle part, outer sides), and a direction
//! selector picks the reading order. Tensors, autodiff, the topic model and
//! the evaluation metrics are implemented in this crate.

pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod keyword;
pub mod lda;
pub mod metrics;
pub mod numcore;
pub mod pipeline;
pub mod selector;

pub use error::{Error, Result};

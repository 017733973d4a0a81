//! Hierarchical multi-note text classification: corpus handling, a small
//! transformer encoder trained from scratch, the two-step multi-note model,
//! evaluation metrics with label-only baselines, and topic-keyword ablation.

pub mod ablation;
pub mod corpus;
pub mod encoder;
pub mod harness;
pub mod hierarchy;
pub mod error;
pub mod metrics;
pub mod tokenizer;

pub use error::{Error, Result};

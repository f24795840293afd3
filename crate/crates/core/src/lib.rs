//! Semi-supervised video object segmentation by collaborative
//! foreground-background integration.
//!
//! Given the object masks of the first frame, every later frame is segmented
//! by matching its pixel embeddings against the first frame (globally) and
//! against the previous frame (within several local windows), for both each
//! object's foreground and its relative background. Instance-level means of
//! the same foreground/background split gate the channels of a dilated
//! residual ensembler that turns the matching maps into per-object logits.

pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod ensembler;
pub mod error;
pub mod inference;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod training;
mod nn;

pub use error::{Error, Result};
pub use model::{Cfbi, FrameFeatures, ModelConfig, ObjectContext};
pub use nn::init_params;

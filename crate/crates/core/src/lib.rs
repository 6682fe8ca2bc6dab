//! Class-incremental prompt learning over frozen embeddings with per-class
//! generative replay.
//!
//! The engine works entirely in embedding space. For every new task it fits
//! one generator per class on that task's visual features, keeps only the
//! decoder side, and re-tunes the text prompts of every class seen so far on
//! features sampled from all stored generators. Classes never trained on
//! fall back to the handcrafted `a photo of a <class>` prompt.

pub mod alignment;
pub mod error;
pub mod features;
pub mod formats;
pub mod generative;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod text;

pub use error::{Error, ErrorCategory, Result};

/// Identifier of a benchmark class. Dense from zero within a benchmark.
pub type ClassId = u32;

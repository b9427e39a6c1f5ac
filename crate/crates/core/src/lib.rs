//! Cross-domain face matching: selfie and ID-document face chips are
//! normalized, augmented and embedded, and a binary classifier decides from
//! the element-wise difference of two embeddings whether they show the same
//! person.

pub mod augment;
pub mod classify;
pub mod config;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod manifest;
pub mod pairs;
pub mod photometric;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};

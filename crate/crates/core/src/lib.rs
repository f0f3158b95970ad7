//! Relevance modeling pipeline over a synthetic e-commerce world.
//!
//! Stages: a chain-of-thought annotator tuned with a language-model loss and
//! aligned to purchase behaviour with KTO; hard-sample mining against the
//! online student; error-type-aware adversarial synthesis; and distillation
//! from an attribute-augmented teacher into a shallow student.

pub mod annotator;
pub mod classifier;
pub mod corpus;
pub mod distiller;
pub mod error;
pub mod evalkit;
pub mod neural;
pub mod pipeline;
pub mod rng;
pub mod synthesizer;

pub use error::{Error, Result};

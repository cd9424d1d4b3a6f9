//! Syntax-aware handwritten math recognition: a grammar that turns markup
//! into canonical trees, a stack-driven tree decoder with path-restricted
//! attention, and the training and evaluation code around them.

pub mod cli;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod evaluation;
pub mod grammar;
pub mod model;
pub mod numerics;
pub mod training;

pub use model::{AttentionMode, ModelConfig, ModelError, San};

//! Knowledge adapters for a small multilingual transformer encoder.
//!
//! The crate covers the whole enhancement workflow: a from-scratch numeric
//! core with reverse-mode gradients, a pre-norm encoder with masked-language
//! pretraining, bottleneck adapters with attention fusion, contrastive
//! knowledge-integration objectives, multilingual knowledge-graph data
//! (including a synthetic generator), cosine-retrieval evaluation, and the
//! staged pipeline that ties them together.

pub mod adapters;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numeric;
pub mod objectives;
pub mod pipeline;
pub mod seed;
#[cfg(test)]
mod testkit;

pub use error::{Error, Result};

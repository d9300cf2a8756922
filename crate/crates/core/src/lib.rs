//! Gaussian-density embeddings for knowledge-graph entities and relations,
//! closed-form query operators, training, and ranking evaluation.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod kg;
pub mod query;
pub mod synthetic;
pub mod trainer;

pub use embedding::EmbeddingTable;
pub use error::{Error, ErrorKind, Result};

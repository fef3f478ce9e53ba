//! Incremental generalized category discovery over precomputed embeddings.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod discovery;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod losses;
pub mod neighbors;
pub mod registry;
pub mod rng;
pub mod snn;

pub use config::RunConfig;
pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
pub use registry::{CategoryId, CategoryRegistry, Provenance};

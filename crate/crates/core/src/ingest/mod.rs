//! Embedding file formats and synthetic benchmark generation.

mod format;
mod manifest;
mod synthetic;

pub use format::{
    decode_binary, decode_binary_prefix, encode_binary, format_text, parse_text,
    read_embeddings_any, read_embeddings_binary, read_embeddings_text, write_embeddings_binary,
    write_embeddings_text, BinaryRecord, MAGIC, VERSION_MATRIX, VERSION_SUPPORT,
};
pub(crate) use format::Reader;
pub use manifest::{read_benchmark, write_benchmark, Manifest, StageEntry};
pub use synthetic::{generate_benchmark, stage_category_counts, Benchmark, SyntheticSpec};

//! Single-stage sparse retrieval engine.
//!
//! Token embeddings are projected into high-dimensional TopK-sparse codes by
//! a trained sparse autoencoder, indexed in neuron-level inverted lists with
//! block upper bounds, and queried by sparse late interaction — exactly, or
//! through a coarse-to-fine pruning stage which must reproduce the exact
//! candidate set. Distortion against dense late interaction is bounded and
//! empirically checked.

pub mod analysis;
mod binio;
pub mod config;
pub mod corpus;
mod error;
pub mod index;
pub mod retrieval;
pub mod sae;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};

/// CRC32 of a file's contents; used for artifact digests in run manifests.
pub fn crc32_file(path: &std::path::Path) -> Result<u32> {
    let bytes = std::fs::read(path)?;
    let mut crc = binio::Crc32::new();
    crc.update(&bytes);
    Ok(crc.finish())
}

//! File formats, tokenization, benchmarking and the command-line front end
//! for the modular ranker in `mores-core`.

pub mod attn_dump;
pub mod bench;
mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod index_io;
pub mod trec;
pub mod vocab;

pub use error::{Error, Result};

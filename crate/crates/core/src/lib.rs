//! Modular Transformer reranker.
//!
//! Documents and queries are encoded by independent representation
//! modules; a stack of interaction blocks lets query tokens attend to the
//! fixed document representation, and the CLS row of the last block is
//! projected to a relevance score. Document representations (or their
//! per-block key/value projections) can be computed offline and reused.
//!
//! This crate is `no_std` + `alloc`: file formats, timing and the CLI live
//! in the `mores` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod blocks;
pub mod cost;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod reuse;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Eager, Graph};
pub use model::{split_initialize, CrossInit, DocRepr, HyperParams, KvPair, MonolithicModel, MoresModel};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{MacCounter, MacKind, Tensor};

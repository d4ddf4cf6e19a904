//! Unsupervised word-translation between two embedding spaces.
//!
//! The pipeline projects both vocabularies onto their leading principal
//! axes, runs many seeded mini-batch cycle ICP optimizations there, keeps
//! the run with the lowest reconstruction loss, and refines its matching on
//! the full vectors. An optional Procrustes stage then polishes the maps on
//! a large vocabulary, and translations are retrieved with CSLS.

pub mod cli;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod icp;
pub mod io;
pub mod linalg;
pub mod matching;
pub mod orchestrator;
pub mod synth;

pub use error::{Error, Result};
pub use icp::{IcpConfig, IcpMode, RunRecord, TransformPair};
pub use io::{EmbeddingSet, Lexicon};
pub use matching::{CorrespondenceMap, Retrieval};
pub use orchestrator::{PipelineConfig, StochasticityPolicy};

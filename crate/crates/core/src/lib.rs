//! Knowledge-graph-aware recommendation engine.
//!
//! The pipeline: ingest interaction and triple files, cluster the KG
//! relations into K virtual relations and split the graph into K
//! subgraphs, encode entities by local weighted smoothing on each
//! subgraph (fused by learned attention weights) and users by smoothing
//! over their interacted items, train the embeddings with a BPR ranking
//! loss through an exact hand-rolled backward pass, and evaluate top-N
//! recommendation under the all-ranking protocol.

pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod lws;
pub mod matrix;
pub mod model;
pub mod params;
pub mod train;
pub mod vrkg;

pub use error::{Error, Result};

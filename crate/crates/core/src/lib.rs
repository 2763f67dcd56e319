//! Approximate nearest-neighbor retrieval with a retrieval forest proposing
//! seeds and a multiscale k-NN navigation graph refining them.
//!
//! The pipeline per query:
//!
//! 1. [`forest::RetrievalForest`] routes the query through every tree and ranks
//!    sample ids by how many leaves they share with it.
//! 2. The top-ranked ids seed a beam traversal ([`search::Searcher`]) that
//!    descends the levels of a [`navgraph::MultiscaleGraph`], from the sparse
//!    top level to the complete bottom level.
//!
//! [`oracle`] provides exact ground truth and the recall / speedup metrics,
//! [`container::Index`] the on-disk format and [`bench`] the `navg` command set.

pub mod bench;
pub mod codec;
pub mod container;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod forest;
pub mod navgraph;
pub mod oracle;
pub mod report;
pub mod search;
pub mod synth;
pub mod vecs;

pub use container::{BuildConfig, Index};
pub use dataset::{distance, Metric, VectorDataset};
pub use error::{Error, Result};
pub use exec::Exec;
pub use forest::{ForestConfig, RetrievalForest};
pub use navgraph::MultiscaleGraph;
pub use search::{QueryResult, SearchMode, SearchParams, Searcher};

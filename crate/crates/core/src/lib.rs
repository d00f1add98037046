//! Knowledge graph embedding engine for multi-core CPUs.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`ingest`] reads N-Triples or TSV files in newline-aligned chunks, in parallel.
//! - [`vocab`] assigns dense indices and packs triples at the narrowest integer width.
//! - [`models`] holds the scoring contract and the DistMult, ComplEx and QMult models.
//! - [`train`] runs mini-batch KvsAll or negative-sampling training over row-sharded parameters.
//! - [`eval`] computes filtered MRR and Hits@k.
//! - [`continual`] handles checkpoints and vocabulary extension for evolving graphs.
//! - [`autoconf`] suggests a training configuration from dataset size and a memory budget.
//! - [`serve`] exposes a loaded checkpoint over a read-only JSON API.

pub mod autoconf;
pub mod continual;
pub mod eval;
pub mod ingest;
pub mod models;
pub mod progress;
pub mod rng;
pub mod serve;
pub mod train;
pub mod vocab;

pub use continual::Checkpoint;
pub use ingest::RawTriple;
pub use models::{EmbeddingStore, KgeModel, ModelKind, ModelSpec};
pub use train::TrainConfig;
pub use vocab::{IndexedDataset, Triple, Vocabulary};

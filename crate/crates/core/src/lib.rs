//! Multi-modal latent item-graph recommendation.
//!
//! The pipeline, end to end:
//!
//! 1. [`ingest`] loads implicit-feedback interactions (or object-service event
//!    logs) and per-modality item features, and produces seeded per-user splits.
//! 2. [`graph`] builds a clamped-cosine kNN item graph per modality, a second
//!    graph from trainably transformed features, and blends the two.
//! 3. [`fusion`] mixes the modality graphs with softmax weights and propagates
//!    item embeddings through parameter-free graph convolution.
//! 4. [`model`] adds the normalized convolution output to the item embeddings,
//!    scores user/item pairs by inner product and trains everything with BPR.
//!    The matrix-factorization baseline is the same trainer with the item graph
//!    switched off.
//! 5. [`eval`] runs the all-ranking top-K protocol (precision, recall, NDCG,
//!    MAP, MAE, RMSE) with warm/cold segmentation.
//! 6. [`experiment`] ties it together: INI configs, synthetic data, runs, sweeps.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod graph;
pub mod ingest;
pub mod model;

pub use error::{Error, Result};

/// Library version recorded in reproducibility manifests and checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

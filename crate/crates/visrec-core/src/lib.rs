//! Visual-similarity recommendation engine.
//!
//! The crate is organized around the life cycle of an embedding:
//!
//! - [`net`] trains a small multi-path convolutional network with a triplet
//!   hinge ranking loss and extracts L2-normalized embeddings from images.
//! - [`triplets`] bootstraps candidate training triplets from a catalog using
//!   pluggable basic image similarity scorers (BISS) and applies offline
//!   human vetting verdicts.
//! - [`index`] maintains an exact, shardable k-nearest-neighbor index over
//!   embeddings with metadata search-space pruning, incremental updates that
//!   are bit-identical to a full rebuild, and near-duplicate detection.
//! - [`ingest`] consumes insert/delete/update events, keeps a replayable
//!   feature store, and drives periodic index refreshes with atomic
//!   publication.
//! - [`service`] serves similar-item lookups from the precomputed neighbor
//!   cache and exposes the feature-extraction endpoint over HTTP.
//! - [`eval`] measures triplet accuracy and recall-at-k and renders reports.

pub mod catalog;
pub mod color;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod image;
pub mod index;
pub mod ingest;
pub mod net;
pub mod service;
pub mod triplets;

pub use embedding::{euclidean_distance, triplet_loss, Embedding};
pub use error::{Error, Result};
pub use image::Image;

//! Event-driven ingestion: a file-tailed JSONL event log feeds feature
//! extraction into a persistent, replayable feature store; a periodic
//! refresh diffs the store against the serving index and publishes the next
//! generation atomically.

mod event;
mod pipeline;
mod store;

pub use event::{append_events, EventLogReader, EventOp, IngestionEvent};
pub use pipeline::{
    ConsumeStats, DeadLetter, FeatureExtractor, Pipeline, PipelineHandle, PublishedIndex,
    RefreshOutcome, RefreshPolicy,
};
pub use store::{Applied, FeatureStore, StoredItem, STORE_MAGIC};

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use arc_swap::ArcSwap;
use rayon::prelude::*;

use super::event::{EventLogReader, EventOp, IngestionEvent};
use super::store::{Applied, FeatureStore};
use crate::catalog::ItemMetadata;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::index::{IndexedItem, KnnIndex};
use crate::net::Network;

/// Extracts an embedding from an image (the FV service boundary).
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &Image) -> Result<Embedding>;
}

impl FeatureExtractor for Network {
    fn extract(&self, image: &Image) -> Result<Embedding> {
        self.forward(image)
    }
}

/// Refresh cadence. Production default is 30 minutes; tests shrink it to
/// seconds.
#[derive(Debug, Clone, Copy)]
pub struct RefreshPolicy {
    pub interval: Duration,
    /// Upper bound on added/removed items applied per refresh; the
    /// remainder rolls over to the next cycle.
    pub max_batch: usize,
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        RefreshPolicy {
            interval: Duration::from_secs(30 * 60),
            max_batch: 100_000,
        }
    }
}

impl RefreshPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.interval.is_zero() {
            return Err(Error::Config("refresh interval must be positive".into()));
        }
        if self.max_batch == 0 {
            return Err(Error::Config("max_batch must be positive".into()));
        }
        Ok(())
    }
}

/// The atomically published index generation. Readers pin a generation with
/// [`PublishedIndex::current`]; the maintenance actor swaps in the next one.
pub struct PublishedIndex {
    inner: ArcSwap<KnnIndex>,
}

impl PublishedIndex {
    pub fn new(index: KnnIndex) -> Self {
        PublishedIndex {
            inner: ArcSwap::from_pointee(index),
        }
    }

    /// Lock-free load of the current generation.
    pub fn current(&self) -> Arc<KnnIndex> {
        self.inner.load_full()
    }

    fn publish(&self, index: KnnIndex) {
        self.inner.store(Arc::new(index));
    }
}

/// Outcome of one refresh cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefreshOutcome {
    /// Empty delta: the previous generation keeps serving, nothing republished.
    Unchanged,
    Published {
        generation: u64,
        added: usize,
        removed: usize,
    },
}

/// Dead-letter sink for quarantined events.
pub struct DeadLetter {
    path: PathBuf,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct DeadLetterLine {
    seq: u64,
    id: String,
    error: String,
}

impl DeadLetter {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        DeadLetter { path: path.into() }
    }

    fn record(&self, event: &IngestionEvent, error: &Error) -> Result<()> {
        let line = DeadLetterLine {
            seq: event.seq,
            id: event.id.clone(),
            error: error.to_string(),
        };
        let mut buf = serde_json::to_vec(&line)?;
        buf.push(b'\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&self.path, e))
    }

    /// Quarantined sequence numbers, for no-event-loss audits.
    pub fn seqs(&self) -> Result<Vec<u64>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let mut out = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let parsed: DeadLetterLine = serde_json::from_str(line)?;
            out.push(parsed.seq);
        }
        Ok(out)
    }
}

/// Consumption statistics from one poll.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ConsumeStats {
    pub applied: usize,
    pub skipped_replay: usize,
    pub quarantined: usize,
}

/// Single-consumer ingestion pipeline plus the refresh actor.
pub struct Pipeline {
    store: Arc<Mutex<FeatureStore>>,
    extractor: Arc<dyn FeatureExtractor>,
    published: Arc<PublishedIndex>,
    dead_letter: DeadLetter,
    policy: RefreshPolicy,
}

impl Pipeline {
    pub fn new(
        store: FeatureStore,
        extractor: Arc<dyn FeatureExtractor>,
        published: Arc<PublishedIndex>,
        dead_letter: DeadLetter,
        policy: RefreshPolicy,
    ) -> Result<Self> {
        policy.validate()?;
        Ok(Pipeline {
            store: Arc::new(Mutex::new(store)),
            extractor,
            published,
            dead_letter,
            policy,
        })
    }

    pub fn store(&self) -> Arc<Mutex<FeatureStore>> {
        Arc::clone(&self.store)
    }

    pub fn published(&self) -> Arc<PublishedIndex> {
        Arc::clone(&self.published)
    }

    /// Applies every complete event currently in the log. Extraction of a
    /// poll batch runs in parallel; appends commit in sequence order.
    pub fn consume_available(&self, reader: &mut EventLogReader) -> Result<ConsumeStats> {
        let events = reader.poll()?;
        let mut stats = ConsumeStats::default();
        if events.is_empty() {
            return Ok(stats);
        }

        // Parallel extraction: (event index) -> embedding or error.
        let extracted: Vec<Option<Result<Embedding>>> = events
            .par_iter()
            .map(|event| match event.op {
                EventOp::Insert | EventOp::Update => Some(
                    event
                        .validate()
                        .and_then(|_| {
                            Image::read_ppm(event.image.as_ref().expect("validated"))
                        })
                        .and_then(|img| self.extractor.extract(&img)),
                ),
                EventOp::Delete => None,
            })
            .collect();

        let mut store = self.store.lock().expect("store lock");
        for (event, extraction) in events.iter().zip(extracted) {
            let applied = match (event.op, extraction) {
                (EventOp::Delete, _) => store.delete(event.seq, &event.id)?,
                (_, Some(Ok(embedding))) => {
                    let metadata = event
                        .metadata
                        .clone()
                        .unwrap_or_else(ItemMetadata::unknown);
                    store.put(event.seq, &event.id, embedding, metadata)?
                }
                (_, Some(Err(e))) => {
                    self.dead_letter.record(event, &e)?;
                    stats.quarantined += 1;
                    continue;
                }
                (_, None) => unreachable!("insert/update always extracts"),
            };
            match applied {
                Applied::Applied => stats.applied += 1,
                Applied::SkippedReplay => stats.skipped_replay += 1,
            }
        }
        Ok(stats)
    }

    /// Diffs the store against the published generation by id and version,
    /// applies the delta, and publishes atomically. An empty delta leaves
    /// the previous generation in place.
    pub fn refresh(&self) -> Result<RefreshOutcome> {
        let snapshot: Vec<IndexedItem> = {
            let store = self.store.lock().expect("store lock");
            store
                .visible()
                .values()
                .map(|item| IndexedItem {
                    id: item.id.clone(),
                    embedding: item.embedding.values().to_vec(),
                    metadata: item.metadata.clone(),
                    version: item.version,
                })
                .collect()
        };
        let current = self.published.current();
        let index_versions = current.item_versions();

        let mut removed: Vec<String> = Vec::new();
        let mut added: Vec<IndexedItem> = Vec::new();
        let store_ids: std::collections::BTreeMap<&str, u64> = snapshot
            .iter()
            .map(|it| (it.id.as_str(), it.version))
            .collect();
        for (id, version) in &index_versions {
            match store_ids.get(id.as_str()) {
                None => removed.push(id.clone()),
                Some(&v) if v != *version => removed.push(id.clone()),
                _ => {}
            }
        }
        for item in snapshot {
            let fresh = match index_versions.get(&item.id) {
                None => true,
                Some(&v) => v != item.version,
            };
            if fresh {
                added.push(item);
            }
        }
        removed.truncate(self.policy.max_batch);
        // Keep remove+add pairs (updates) intact under the batch cap.
        if added.len() > self.policy.max_batch {
            let kept: std::collections::HashSet<&str> =
                removed.iter().map(|s| s.as_str()).collect();
            let mut capped = Vec::with_capacity(self.policy.max_batch);
            let mut rest = Vec::new();
            for item in added {
                if kept.contains(item.id.as_str()) {
                    capped.push(item);
                } else {
                    rest.push(item);
                }
            }
            capped.extend(rest);
            capped.truncate(self.policy.max_batch.max(kept.len()));
            added = capped;
        }

        if added.is_empty() && removed.is_empty() {
            return Ok(RefreshOutcome::Unchanged);
        }
        let (added_n, removed_n) = (added.len(), removed.len());
        let next = current.apply_delta(added, &removed)?;
        let generation = next.generation();
        self.published.publish(next);
        Ok(RefreshOutcome::Published {
            generation,
            added: added_n,
            removed: removed_n,
        })
    }

    /// One consume + refresh cycle (the `--once` mode).
    pub fn run_once(&self, reader: &mut EventLogReader) -> Result<(ConsumeStats, RefreshOutcome)> {
        let stats = self.consume_available(reader)?;
        let outcome = self.refresh()?;
        Ok((stats, outcome))
    }

    /// Spawns the consumer and refresh threads. The consumer tails the log;
    /// the refresher ticks on the policy interval. Refresh never blocks
    /// event application (it holds the store lock only to snapshot).
    pub fn spawn(self, events_path: PathBuf) -> PipelineHandle {
        let shutdown = Arc::new(AtomicBool::new(false));
        let errors: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));
        let pipeline = Arc::new(self);

        let consumer = {
            let pipeline = Arc::clone(&pipeline);
            let shutdown = Arc::clone(&shutdown);
            let errors = Arc::clone(&errors);
            std::thread::spawn(move || {
                let mut reader = EventLogReader::new(events_path);
                while !shutdown.load(Ordering::Relaxed) {
                    match pipeline.consume_available(&mut reader) {
                        Ok(_) => {}
                        Err(e) => {
                            errors.lock().expect("errors lock").push(e.to_string());
                            break;
                        }
                    }
                    std::thread::sleep(Duration::from_millis(20));
                }
            })
        };

        let refresher = {
            let pipeline = Arc::clone(&pipeline);
            let shutdown = Arc::clone(&shutdown);
            let errors = Arc::clone(&errors);
            std::thread::spawn(move || {
                while !shutdown.load(Ordering::Relaxed) {
                    std::thread::sleep(pipeline.policy.interval);
                    if shutdown.load(Ordering::Relaxed) {
                        break;
                    }
                    if let Err(e) = pipeline.refresh() {
                        // A failed delta leaves the previous generation
                        // serving.
                        errors.lock().expect("errors lock").push(e.to_string());
                    }
                }
            })
        };

        PipelineHandle {
            pipeline,
            shutdown,
            errors,
            threads: vec![consumer, refresher],
        }
    }
}

/// Running pipeline: shuts down and joins on [`PipelineHandle::stop`].
pub struct PipelineHandle {
    pipeline: Arc<Pipeline>,
    shutdown: Arc<AtomicBool>,
    errors: Arc<Mutex<Vec<String>>>,
    threads: Vec<JoinHandle<()>>,
}

impl PipelineHandle {
    pub fn published(&self) -> Arc<PublishedIndex> {
        self.pipeline.published()
    }

    pub fn store(&self) -> Arc<Mutex<FeatureStore>> {
        self.pipeline.store()
    }

    pub fn errors(&self) -> Vec<String> {
        self.errors.lock().expect("errors lock").clone()
    }

    pub fn stop(mut self) -> Vec<String> {
        self.shutdown.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        self.errors()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::event::append_events;

    /// Deterministic stand-in extractor: embeds the mean pixel value.
    struct MeanExtractor;

    impl FeatureExtractor for MeanExtractor {
        fn extract(&self, image: &Image) -> Result<Embedding> {
            let sum: f64 = image.data().iter().map(|&b| b as f64).sum();
            let mean = (sum / image.data().len() as f64) as f32;
            Embedding::new(vec![mean, 1.0])
        }
    }

    fn setup(dir: &std::path::Path) -> (Pipeline, PathBuf) {
        let store = FeatureStore::open(dir.join("store.bin")).unwrap();
        let published = Arc::new(PublishedIndex::new(KnnIndex::empty(2, 3).unwrap()));
        let pipeline = Pipeline::new(
            store,
            Arc::new(MeanExtractor),
            published,
            DeadLetter::new(dir.join("dead.jsonl")),
            RefreshPolicy {
                interval: Duration::from_millis(50),
                max_batch: 1000,
            },
        )
        .unwrap();
        (pipeline, dir.join("events.jsonl"))
    }

    fn insert_event(dir: &std::path::Path, seq: u64, id: &str, shade: u8) -> IngestionEvent {
        let img = Image::filled(4, 4, [shade, shade, shade]);
        let path = dir.join(format!("{id}.ppm"));
        img.write_ppm(&path).unwrap();
        IngestionEvent {
            seq,
            op: EventOp::Insert,
            id: id.into(),
            image: Some(path),
            metadata: Some(ItemMetadata::new("g", "v", "x")),
        }
    }

    #[test]
    fn consume_then_refresh_makes_items_queryable() {
        let dir = tempfile::tempdir().unwrap();
        let (pipeline, events) = setup(dir.path());
        append_events(
            &events,
            &[
                insert_event(dir.path(), 1, "a", 10),
                insert_event(dir.path(), 2, "b", 200),
            ],
        )
        .unwrap();
        let mut reader = EventLogReader::new(&events);
        let (stats, outcome) = pipeline.run_once(&mut reader).unwrap();
        assert_eq!(stats.applied, 2);
        assert!(matches!(
            outcome,
            RefreshOutcome::Published {
                generation: 1,
                added: 2,
                removed: 0
            }
        ));
        let index = pipeline.published().current();
        assert!(index.neighbor_list("a").is_some());

        // Pre-refresh state: a third insert is invisible until refreshed.
        append_events(&events, &[insert_event(dir.path(), 3, "c", 128)]).unwrap();
        pipeline.consume_available(&mut reader).unwrap();
        assert!(pipeline.published().current().neighbor_list("c").is_none());
        pipeline.refresh().unwrap();
        assert!(pipeline.published().current().neighbor_list("c").is_some());
    }

    #[test]
    fn empty_delta_keeps_generation() {
        let dir = tempfile::tempdir().unwrap();
        let (pipeline, events) = setup(dir.path());
        append_events(&events, &[insert_event(dir.path(), 1, "a", 10)]).unwrap();
        let mut reader = EventLogReader::new(&events);
        pipeline.run_once(&mut reader).unwrap();
        let g1 = pipeline.published().current().generation();
        assert_eq!(pipeline.refresh().unwrap(), RefreshOutcome::Unchanged);
        assert_eq!(pipeline.published().current().generation(), g1);
    }

    #[test]
    fn unreadable_image_goes_to_dead_letter_and_pipeline_continues() {
        let dir = tempfile::tempdir().unwrap();
        let (pipeline, events) = setup(dir.path());
        let bad = IngestionEvent {
            seq: 1,
            op: EventOp::Insert,
            id: "broken".into(),
            image: Some(dir.path().join("missing.ppm")),
            metadata: None,
        };
        append_events(&events, &[bad, insert_event(dir.path(), 2, "ok", 50)]).unwrap();
        let mut reader = EventLogReader::new(&events);
        let stats = pipeline.consume_available(&mut reader).unwrap();
        assert_eq!(stats.applied, 1);
        assert_eq!(stats.quarantined, 1);
        let dead = DeadLetter::new(dir.path().join("dead.jsonl"));
        assert_eq!(dead.seqs().unwrap(), vec![1]);
        assert!(pipeline.store().lock().unwrap().get("ok").is_some());
    }

    #[test]
    fn update_requeries_as_new_version() {
        let dir = tempfile::tempdir().unwrap();
        let (pipeline, events) = setup(dir.path());
        append_events(&events, &[insert_event(dir.path(), 1, "a", 10)]).unwrap();
        let mut reader = EventLogReader::new(&events);
        pipeline.run_once(&mut reader).unwrap();
        let v1 = pipeline.published().current().item("a").unwrap();

        let mut update = insert_event(dir.path(), 2, "a", 240);
        update.op = EventOp::Update;
        append_events(&events, &[update]).unwrap();
        let (_, outcome) = pipeline.run_once(&mut reader).unwrap();
        assert!(matches!(
            outcome,
            RefreshOutcome::Published {
                added: 1,
                removed: 1,
                ..
            }
        ));
        let v2 = pipeline.published().current().item("a").unwrap();
        assert_ne!(v1.embedding, v2.embedding);
        assert_eq!(v2.version, 2);
    }

    #[test]
    fn spawned_pipeline_publishes_within_interval() {
        let dir = tempfile::tempdir().unwrap();
        let (pipeline, events) = setup(dir.path());
        let handle = pipeline.spawn(events.clone());
        append_events(&events, &[insert_event(dir.path(), 1, "live", 99)]).unwrap();

        let deadline = std::time::Instant::now() + Duration::from_secs(2);
        let mut found = false;
        while std::time::Instant::now() < deadline {
            if handle
                .published()
                .current()
                .neighbor_list("live")
                .is_some()
            {
                found = true;
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        let errors = handle.stop();
        assert!(errors.is_empty(), "pipeline errors: {errors:?}");
        assert!(found, "item not published within deadline");
    }
}

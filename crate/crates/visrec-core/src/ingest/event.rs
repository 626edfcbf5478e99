use std::fs;
use std::io::{BufRead, BufReader, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::ItemMetadata;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventOp {
    Insert,
    Delete,
    /// Re-extract and replace: delete + insert semantics.
    Update,
}

/// One line of the ingestion event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionEvent {
    pub seq: u64,
    pub op: EventOp,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<ItemMetadata>,
}

impl IngestionEvent {
    pub fn validate(&self) -> Result<()> {
        match self.op {
            EventOp::Insert | EventOp::Update => {
                if self.image.is_none() {
                    return Err(Error::Ingest(format!(
                        "{:?} event seq {} without image path",
                        self.op, self.seq
                    )));
                }
            }
            EventOp::Delete => {}
        }
        Ok(())
    }
}

/// Tails a JSONL event log: each poll returns the newly completed lines.
///
/// Sequence numbers must strictly increase within the log; a torn final line
/// (no trailing newline yet) is left for the next poll. Relative image paths
/// are resolved against the log's directory.
pub struct EventLogReader {
    path: PathBuf,
    offset: u64,
    last_seq: Option<u64>,
}

impl EventLogReader {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        EventLogReader {
            path: path.into(),
            offset: 0,
            last_seq: None,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Reads all complete events appended since the last poll.
    pub fn poll(&mut self) -> Result<Vec<IngestionEvent>> {
        let file = match fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let mut reader = BufReader::new(file);
        reader
            .seek(SeekFrom::Start(self.offset))
            .map_err(|e| Error::io(&self.path, e))?;

        let mut events = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader
                .read_line(&mut line)
                .map_err(|e| Error::io(&self.path, e))?;
            if n == 0 {
                break;
            }
            if !line.ends_with('\n') {
                // Torn write: retry this line on the next poll.
                break;
            }
            self.offset += n as u64;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let event: IngestionEvent =
                serde_json::from_str(trimmed).map_err(|e| Error::Format {
                    path: self.path.clone(),
                    reason: format!("at byte offset {}: {e}", self.offset - n as u64),
                })?;
            if let Some(last) = self.last_seq {
                if event.seq <= last {
                    return Err(Error::OutOfOrder {
                        seq: event.seq,
                        last,
                    });
                }
            }
            self.last_seq = Some(event.seq);
            let mut event = event;
            if let Some(img) = &event.image {
                if img.is_relative() {
                    if let Some(base) = self.path.parent() {
                        event.image = Some(base.join(img));
                    }
                }
            }
            events.push(event);
        }
        Ok(events)
    }
}

/// Appends events to a JSONL log (test and tooling helper).
pub fn append_events(path: impl AsRef<Path>, events: &[IngestionEvent]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn event(seq: u64, op: EventOp, id: &str) -> IngestionEvent {
        IngestionEvent {
            seq,
            op,
            id: id.into(),
            image: matches!(op, EventOp::Insert | EventOp::Update)
                .then(|| PathBuf::from(format!("{id}.ppm"))),
            metadata: None,
        }
    }

    #[test]
    fn tails_only_complete_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        append_events(&path, &[event(1, EventOp::Insert, "a")]).unwrap();
        // torn tail
        let mut f = fs::OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{{\"seq\":2,\"op\":\"insert\"").unwrap();

        let mut reader = EventLogReader::new(&path);
        let got = reader.poll().unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].seq, 1);

        writeln!(f, ",\"id\":\"b\",\"image\":\"b.ppm\"}}").unwrap();
        let got = reader.poll().unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].seq, 2);
        assert_eq!(got[0].id, "b");
        // relative image path resolved against the log directory
        assert_eq!(got[0].image.as_deref(), Some(dir.path().join("b.ppm")).as_deref());
    }

    #[test]
    fn non_monotonic_log_is_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        append_events(
            &path,
            &[event(5, EventOp::Insert, "a"), event(5, EventOp::Insert, "b")],
        )
        .unwrap();
        let mut reader = EventLogReader::new(&path);
        assert!(matches!(
            reader.poll(),
            Err(Error::OutOfOrder { seq: 5, last: 5 })
        ));
    }

    #[test]
    fn missing_file_is_empty_not_error() {
        let mut reader = EventLogReader::new("/nonexistent/events.jsonl");
        assert!(reader.poll().unwrap().is_empty());
    }
}

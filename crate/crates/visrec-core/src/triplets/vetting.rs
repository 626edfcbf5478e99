use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::CandidateTriplet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    /// p and n were wrongly ordered; exchange them.
    Swap,
    Reject,
}

/// One human verdict, keyed by the candidate's (q, p, n).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VettingRecord {
    pub q: String,
    pub p: String,
    pub n: String,
    pub verdict: Verdict,
}

/// Applies a sparse vetting file: accept keeps, swap exchanges p and n,
/// reject drops. Candidates without a verdict pass through unchanged; a
/// verdict whose key matches no candidate is a hard error (stale file).
pub fn apply_vetting(
    candidates: Vec<CandidateTriplet>,
    records: &[VettingRecord],
) -> Result<Vec<CandidateTriplet>> {
    let mut verdicts: HashMap<(String, String, String), (Verdict, bool)> = HashMap::new();
    for r in records {
        verdicts.insert(
            (r.q.clone(), r.p.clone(), r.n.clone()),
            (r.verdict, false),
        );
    }

    let mut out = Vec::with_capacity(candidates.len());
    for mut c in candidates {
        match verdicts.get_mut(&c.key()) {
            None => out.push(c),
            Some((verdict, used)) => {
                *used = true;
                match verdict {
                    Verdict::Accept => out.push(c),
                    Verdict::Reject => {}
                    Verdict::Swap => {
                        std::mem::swap(&mut c.p, &mut c.n);
                        std::mem::swap(&mut c.provenance.p, &mut c.provenance.n);
                        out.push(c);
                    }
                }
            }
        }
    }

    let mut stale: Vec<String> = verdicts
        .iter()
        .filter(|(_, (_, used))| !used)
        .map(|((q, p, n), _)| format!("({q},{p},{n})"))
        .collect();
    if !stale.is_empty() {
        stale.sort();
        return Err(Error::UnknownVettingKey(stale.join(", ")));
    }
    Ok(out)
}

pub fn write_vetting_jsonl(records: &[VettingRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_vetting_jsonl(path: impl AsRef<Path>) -> Result<Vec<VettingRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: VettingRecord = serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(r);
    }
    Ok(out)
}

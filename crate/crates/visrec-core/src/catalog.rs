//! Catalog item metadata and the JSONL corpus manifest.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Sentinel partition value for items missing a metadata attribute.
pub const UNKNOWN: &str = "unknown";

/// The metadata attributes used for search-space pruning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub category_group: String,
    pub vertical: String,
    pub gender: String,
}

impl ItemMetadata {
    pub fn new(
        category_group: impl Into<String>,
        vertical: impl Into<String>,
        gender: impl Into<String>,
    ) -> Self {
        ItemMetadata {
            category_group: category_group.into(),
            vertical: vertical.into(),
            gender: gender.into(),
        }
    }

    /// All three attributes set to the `unknown` sentinel.
    pub fn unknown() -> Self {
        Self::new(UNKNOWN, UNKNOWN, UNKNOWN)
    }

    pub fn partition_key(&self) -> PartitionKey {
        PartitionKey(self.clone())
    }
}

/// Index partition key: the full (category_group, vertical, gender) triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartitionKey(pub ItemMetadata);

impl fmt::Display for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.0.category_group, self.0.vertical, self.0.gender
        )
    }
}

/// One line of the corpus manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    #[serde(default)]
    pub category_group: Option<String>,
    #[serde(default)]
    pub vertical: Option<String>,
    #[serde(default)]
    pub gender: Option<String>,
}

impl ManifestEntry {
    pub fn metadata(&self) -> ItemMetadata {
        let or_unknown = |v: &Option<String>| v.clone().unwrap_or_else(|| UNKNOWN.to_string());
        ItemMetadata {
            category_group: or_unknown(&self.category_group),
            vertical: or_unknown(&self.vertical),
            gender: or_unknown(&self.gender),
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// An in-memory corpus: loaded images plus metadata, addressable by id.
#[derive(Debug, Clone)]
pub struct Corpus {
    items: Vec<CorpusItem>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub id: String,
    pub image: Image,
    pub metadata: ItemMetadata,
}

impl Corpus {
    pub fn new(items: Vec<CorpusItem>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if by_id.insert(item.id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate corpus id {}", item.id)));
            }
        }
        Ok(Corpus { items, by_id })
    }

    /// Loads every image referenced by a manifest. Relative image paths are
    /// resolved against the manifest's directory.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let entries = read_manifest(manifest_path)?;
        let mut items = Vec::with_capacity(entries.len());
        for entry in entries {
            let img_path = if entry.image.is_absolute() {
                entry.image.clone()
            } else {
                base.join(&entry.image)
            };
            items.push(CorpusItem {
                metadata: entry.metadata(),
                image: Image::read_ppm(&img_path)?,
                id: entry.id,
            });
        }
        Corpus::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[CorpusItem] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&CorpusItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    /// Position of an id in `items()` order.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn image(&self, id: &str) -> Result<&Image> {
        self.get(id)
            .map(|item| &item.image)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// Ids sharing a category group, ascending.
    pub fn same_group_ids(&self, category_group: &str) -> Vec<String> {
        let mut ids: Vec<String> = self
            .items
            .iter()
            .filter(|it| it.metadata.category_group == category_group)
            .map(|it| it.id.clone())
            .collect();
        ids.sort_unstable();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip_with_missing_attrs() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(2, 2, [1, 2, 3]);
        img.write_ppm(dir.path().join("a.ppm")).unwrap();
        let manifest = dir.path().join("corpus.jsonl");
        fs::write(
            &manifest,
            "{\"id\":\"a\",\"image\":\"a.ppm\",\"category_group\":\"clothing\"}\n",
        )
        .unwrap();
        let corpus = Corpus::load(&manifest).unwrap();
        assert_eq!(corpus.len(), 1);
        let item = corpus.get("a").unwrap();
        assert_eq!(item.metadata.category_group, "clothing");
        assert_eq!(item.metadata.vertical, UNKNOWN);
        assert_eq!(item.metadata.gender, UNKNOWN);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let item = CorpusItem {
            id: "x".into(),
            image: Image::filled(1, 1, [0, 0, 0]),
            metadata: ItemMetadata::unknown(),
        };
        assert!(Corpus::new(vec![item.clone(), item]).is_err());
    }
}

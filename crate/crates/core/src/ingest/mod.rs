//! Dataset stores, test-split construction, annotation files and review-platform exports.
//!
//! A store directory holds `manifest.json` and one `<split>.jsonl` per split:
//!
//! ```text
//! manifest.json   {"format_version": 1, "splits": {"test": ["p1", ...], "train": [...]}}
//! test.jsonl      one PaperRecord per line, in manifest order
//! ```
//!
//! Records are written in canonical form (fixed field order, sorted label sets), so loading
//! and re-writing a canonical store reproduces its files byte for byte.

mod annotations;
mod openreview;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use annotations::{group_by_unit, load_annotations, majority, AnnotationRecord};
pub use openreview::{load_openreview, note_text, OpenReviewNote, OpenReviewPaper};
pub use split::{build_test_split, PoolSpec, TestSplitConfig};

use crate::domain::{Decision, PaperRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    splits: BTreeMap<String, Vec<String>>,
}

/// Per-split record counts by decision.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub unknown: usize,
}

/// An immutable-after-load set of paper records partitioned into named splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStore {
    root: Option<PathBuf>,
    format_version: u32,
    splits: BTreeMap<String, Vec<PaperRecord>>,
}

impl DatasetStore {
    /// Builds a store from in-memory splits, checking ids are unique across all splits.
    pub fn from_splits(splits: BTreeMap<String, Vec<PaperRecord>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, records) in &splits {
            check_split_name(name)?;
            for r in records {
                r.validate()?;
                if !seen.insert(r.paper_id.as_str()) {
                    return Err(Error::Ingest {
                        file: PathBuf::from(format!("{name}.jsonl")),
                        message: format!("duplicate paper_id `{}`", r.paper_id),
                    });
                }
            }
        }
        Ok(DatasetStore {
            root: None,
            format_version: FORMAT_VERSION,
            splits,
        })
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(root, Exec::default())
    }

    pub fn load_with(root: impl AsRef<Path>, exec: Exec) -> Result<Self> {
        let root = root.as_ref();
        let manifest_path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Ingest {
            file: manifest_path.clone(),
            message: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Ingest {
                file: manifest_path,
                message: format!(
                    "unsupported format_version {} (expected {FORMAT_VERSION})",
                    manifest.format_version
                ),
            });
        }

        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (split, ids) in &manifest.splits {
            check_split_name(split)?;
            for id in ids {
                if let Some(other) = owner.insert(id, split) {
                    return Err(Error::Ingest {
                        file: manifest_path.clone(),
                        message: format!(
                            "duplicate paper_id `{id}` listed in splits `{other}` and `{split}`"
                        ),
                    });
                }
            }
        }

        let entries: Vec<(&String, &Vec<String>)> = manifest.splits.iter().collect();
        let loaded = exec.try_map(&entries, |(split, ids)| {
            let file = root.join(format!("{split}.jsonl"));
            let records = read_records(&file)?;
            order_by_manifest(&file, records, ids).map(|r| ((*split).clone(), r))
        })?;
        Ok(DatasetStore {
            root: Some(root.to_path_buf()),
            format_version: manifest.format_version,
            splits: loaded.into_iter().collect(),
        })
    }

    /// Writes the manifest and split files in canonical form, replacing existing files.
    pub fn write(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        for (split, records) in &self.splits {
            let mut buf = Vec::new();
            for r in records {
                serde_json::to_writer(&mut buf, r)?;
                buf.push(b'\n');
            }
            write_atomic(&root.join(format!("{split}.jsonl")), &buf)?;
        }
        let manifest = Manifest {
            format_version: self.format_version,
            splits: self
                .splits
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|r| r.paper_id.clone()).collect()))
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&root.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn split_names(&self) -> impl Iterator<Item = &str> {
        self.splits.keys().map(String::as_str)
    }

    pub fn split(&self, name: &str) -> Result<&[PaperRecord]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput(format!("store has no split `{name}`")))
    }

    pub fn split_ids(&self, name: &str) -> Result<Vec<&str>> {
        Ok(self
            .split(name)?
            .iter()
            .map(|r| r.paper_id.as_str())
            .collect())
    }

    pub fn records(&self) -> impl Iterator<Item = &PaperRecord> {
        self.splits.values().flatten()
    }

    pub fn get(&self, paper_id: &str) -> Option<&PaperRecord> {
        self.records().find(|r| r.paper_id == paper_id)
    }

    pub fn len(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn summary(&self) -> BTreeMap<String, SplitSummary> {
        self.splits
            .iter()
            .map(|(name, records)| {
                let mut s = SplitSummary::default();
                for r in records {
                    s.total += 1;
                    match r.decision {
                        Decision::Accepted => s.accepted += 1,
                        Decision::Rejected => s.rejected += 1,
                        Decision::Unknown => s.unknown += 1,
                    }
                }
                (name.clone(), s)
            })
            .collect()
    }

    /// Replaces records in place (matched by paper_id), keeping split membership and order.
    pub fn update_records(&mut self, updated: Vec<PaperRecord>) -> Result<()> {
        let mut by_id: BTreeMap<String, PaperRecord> = updated
            .into_iter()
            .map(|r| (r.paper_id.clone(), r))
            .collect();
        for records in self.splits.values_mut() {
            for r in records.iter_mut() {
                if let Some(new) = by_id.remove(&r.paper_id) {
                    new.validate()?;
                    *r = new;
                }
            }
        }
        match by_id.keys().next() {
            Some(id) => Err(Error::InvalidInput(format!(
                "paper `{id}` is not in the store"
            ))),
            None => Ok(()),
        }
    }

    /// Reassigns every record: `test_ids` go to `test`, `dev_size` seeded picks from the
    /// rest go to `dev`, and the remainder to `train`. Order inside each split follows
    /// paper_id.
    pub fn partition(&self, test_ids: &[String], dev_size: usize, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;

        let mut all: BTreeMap<String, PaperRecord> = self
            .records()
            .map(|r| (r.paper_id.clone(), r.clone()))
            .collect();
        let mut test = Vec::with_capacity(test_ids.len());
        for id in test_ids {
            test.push(all.remove(id).ok_or_else(|| {
                Error::InvalidInput(format!("test id `{id}` is missing or repeated"))
            })?);
        }
        let mut rest: Vec<String> = all.keys().cloned().collect();
        if dev_size > rest.len() {
            return Err(Error::InvalidInput(format!(
                "dev split of {dev_size} requested but only {} papers remain",
                rest.len()
            )));
        }
        rest.shuffle(&mut crate::stats::iteration_rng(seed, 0x6465_7673));
        let dev_ids: BTreeSet<String> = rest.into_iter().take(dev_size).collect();
        let (dev, train): (Vec<PaperRecord>, Vec<PaperRecord>) = all
            .into_values()
            .partition(|r| dev_ids.contains(&r.paper_id));
        test.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
        let mut splits = BTreeMap::new();
        splits.insert("train".to_string(), train);
        splits.insert("dev".to_string(), dev);
        splits.insert("test".to_string(), test);
        Self::from_splits(splits)
    }
}

fn check_split_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("invalid split name `{name}`")))
    }
}

fn read_records(file: &Path) -> Result<Vec<PaperRecord>> {
    let f = fs::File::open(file).map_err(|e| Error::io(file, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            file: file.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: PaperRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        record.validate().map_err(|e| malformed(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

fn order_by_manifest(
    file: &Path,
    records: Vec<PaperRecord>,
    ids: &[String],
) -> Result<Vec<PaperRecord>> {
    let ingest = |message: String| Error::Ingest {
        file: file.to_path_buf(),
        message,
    };
    let mut by_id = BTreeMap::new();
    for r in records {
        if by_id.contains_key(&r.paper_id) {
            return Err(ingest(format!("duplicate paper_id `{}`", r.paper_id)));
        }
        by_id.insert(r.paper_id.clone(), r);
    }
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        out.push(
            by_id
                .remove(id)
                .ok_or_else(|| ingest(format!("missing paper_id `{id}` listed in the manifest")))?,
        );
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(ingest(format!(
            "paper_id `{extra}` is not listed in the manifest"
        )));
    }
    Ok(out)
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path.as_ref(), &buf)
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

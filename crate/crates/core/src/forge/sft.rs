use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    generation_prompt, render_feedback_list, sft_hyperparameters, ManifestKind, Message,
    TrainingManifest, GENERATION_PROMPT_VERSION,
};
use crate::domain::{PaperRecord, Source, UnitId};
use crate::error::{Error, Result};
use crate::ingest::{write_jsonl, DatasetStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftMetadata {
    pub paper_id: String,
    pub reviewer_id: String,
    pub unit_ids: Vec<UnitId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub messages: Vec<Message>,
    pub metadata: SftMetadata,
}

/// One example per (paper, reviewer) with at least one successful unit; the target lists
/// exactly that reviewer's successful units. Papers are taken in paper_id order.
pub fn sft_examples(records: &[PaperRecord]) -> Result<Vec<SftExample>> {
    let mut sorted: Vec<&PaperRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    let mut out = Vec::new();
    for paper in sorted {
        let mut reviewers: Vec<&str> = paper
            .threads
            .iter()
            .map(|t| t.reviewer_id.as_str())
            .collect();
        reviewers.sort_unstable();
        reviewers.dedup();
        for reviewer in reviewers {
            let units: Vec<_> = paper
                .units
                .iter()
                .filter(|u| {
                    u.source == Source::Human
                        && u.reviewer_id.as_deref() == Some(reviewer)
                        && u.is_successful()
                })
                .collect();
            if units.is_empty() {
                continue;
            }
            paper.require_body()?;
            let texts: Vec<&str> = units.iter().map(|u| u.text.as_str()).collect();
            let mut messages = generation_prompt(paper);
            messages.push(Message::new("assistant", render_feedback_list(&texts)));
            out.push(SftExample {
                messages,
                metadata: SftMetadata {
                    paper_id: paper.paper_id.clone(),
                    reviewer_id: reviewer.to_string(),
                    unit_ids: units.iter().map(|u| u.id.clone()).collect(),
                },
            });
        }
    }
    Ok(out)
}

/// Writes `sft_<split>.jsonl` and `sft_<split>.manifest.json` under `out_dir`.
pub fn build_sft(
    store: &DatasetStore,
    split: &str,
    out_dir: impl AsRef<Path>,
) -> Result<TrainingManifest> {
    let examples = sft_examples(store.split(split)?)?;
    if examples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "split `{split}` has no reviewer with successful feedback units"
        )));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset_path = out_dir.join(format!("sft_{split}.jsonl"));
    write_jsonl(&dataset_path, &examples)?;
    let manifest = TrainingManifest {
        kind: ManifestKind::Sft,
        dataset_path,
        record_count: examples.len(),
        hyperparameters: sft_hyperparameters(),
        prompt_version: GENERATION_PROMPT_VERSION.into(),
    };
    manifest.write(out_dir.join(format!("sft_{split}.manifest.json")))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::forge::tests::paper_with;

    #[test]
    fn target_holds_only_successful_units() {
        let p = paper_with(
            "P",
            &[
                ("R1", "first", true),
                ("R1", "second", true),
                ("R1", "rebutted one", false),
                ("R1", "third", true),
                ("R2", "nothing useful", false),
            ],
        );
        let ex = sft_examples(&[p]).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].metadata.reviewer_id, "R1");
        assert_eq!(ex[0].metadata.unit_ids.len(), 3);
        let target = &ex[0].messages.last().unwrap().content;
        assert_eq!(target, "1. first\n2. second\n3. third");
        assert_eq!(ex[0].messages[0].role, "system");
    }

    #[test]
    fn build_writes_matching_manifest() {
        let mut splits = BTreeMap::new();
        splits.insert(
            "train".to_string(),
            vec![paper_with("P", &[("R1", "a", true)])],
        );
        let store = DatasetStore::from_splits(splits).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = build_sft(&store, "train", dir.path()).unwrap();
        assert_eq!(m.record_count, 1);
        m.verify().unwrap();
    }

    #[test]
    fn empty_result_is_an_error() {
        let mut splits = BTreeMap::new();
        splits.insert(
            "train".to_string(),
            vec![paper_with("P", &[("R1", "a", false)])],
        );
        let store = DatasetStore::from_splits(splits).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(build_sft(&store, "train", dir.path()).is_err());
    }
}

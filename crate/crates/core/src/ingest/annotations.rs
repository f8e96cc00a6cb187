//! Human annotation files.
//!
//! JSONL, one [`AnnotationRecord`] per line. An optional first line
//! `{"annotators": ["a1", "a2", ...]}` declares the roster; when present, every record
//! must name a rostered annotator. Pair annotations use `"<left_id>|<right_id>"` as
//! `unit_id`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{AuthorAction, Validity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub unit_id: String,
    pub annotator_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<Validity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<AuthorAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_label: Option<bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub likert: BTreeMap<String, u8>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.validity.is_none()
            && self.action.is_none()
            && self.match_label.is_none()
            && self.likert.is_empty()
        {
            return Err("record carries no label".into());
        }
        for (dim, &v) in &self.likert {
            if !(1..=5).contains(&v) {
                return Err(format!("likert `{dim}` = {v} is outside 1..5"));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Roster {
    annotators: Vec<String>,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut roster: Option<BTreeSet<String>> = None;
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            file: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if std::mem::take(&mut first) && value.get("annotators").is_some() {
            let r: Roster = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
            roster = Some(r.annotators.into_iter().collect());
            continue;
        }
        let record: AnnotationRecord =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        record.validate().map_err(malformed)?;
        if let Some(roster) = &roster {
            if !roster.contains(&record.annotator_id) {
                return Err(malformed(format!(
                    "annotator `{}` is not in the roster",
                    record.annotator_id
                )));
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn group_by_unit(records: &[AnnotationRecord]) -> BTreeMap<&str, Vec<&AnnotationRecord>> {
    let mut out: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.unit_id.as_str()).or_default().push(r);
    }
    out
}

/// Per-unit majority label over the annotators that supplied one; `None` on a tie.
pub fn majority<L, F>(records: &[AnnotationRecord], label: F) -> BTreeMap<String, Option<L>>
where
    L: Ord + Clone,
    F: Fn(&AnnotationRecord) -> Option<L>,
{
    let mut out = BTreeMap::new();
    for (unit, group) in group_by_unit(records) {
        let mut counts: BTreeMap<L, usize> = BTreeMap::new();
        for r in group {
            if let Some(l) = label(r) {
                *counts.entry(l).or_default() += 1;
            }
        }
        let Some(&top) = counts.values().max() else {
            continue;
        };
        let mut winners = counts.into_iter().filter(|(_, c)| *c == top);
        let first = winners.next().map(|(l, _)| l);
        let winner = if winners.next().is_some() {
            None
        } else {
            first
        };
        out.insert(unit.to_string(), winner);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), lines.join("\n")).unwrap();
        f
    }

    #[test]
    fn majority_of_three_match_labels() {
        let f = write(&[
            r#"{"annotators": ["x", "y", "z"]}"#,
            r#"{"unit_id": "a|b", "annotator_id": "x", "match_label": true}"#,
            r#"{"unit_id": "a|b", "annotator_id": "y", "match_label": true}"#,
            r#"{"unit_id": "a|b", "annotator_id": "z", "match_label": false}"#,
        ]);
        let records = load_annotations(f.path()).unwrap();
        assert_eq!(records.len(), 3);
        let m = majority(&records, |r| r.match_label);
        assert_eq!(m["a|b"], Some(true));
    }

    #[test]
    fn ties_have_no_majority() {
        let f = write(&[
            r#"{"unit_id": "u", "annotator_id": "x", "validity": "agreed"}"#,
            r#"{"unit_id": "u", "annotator_id": "y", "validity": "rebutted"}"#,
        ]);
        let m = majority(&load_annotations(f.path()).unwrap(), |r| r.validity);
        assert_eq!(m["u"], None);
    }

    #[test]
    fn empty_file_is_empty() {
        let f = write(&[]);
        assert!(load_annotations(f.path()).unwrap().is_empty());
    }

    #[test]
    fn likert_out_of_range() {
        let f = write(&[r#"{"unit_id": "u", "annotator_id": "x", "likert": {"accuracy": 6}}"#]);
        let err = load_annotations(f.path()).unwrap_err().to_string();
        assert!(err.contains("outside 1..5"), "{err}");
    }

    #[test]
    fn unknown_annotator_is_rejected() {
        let f = write(&[
            r#"{"annotators": ["x"]}"#,
            r#"{"unit_id": "u", "annotator_id": "q", "match_label": true}"#,
        ]);
        let err = load_annotations(f.path()).unwrap_err().to_string();
        assert!(err.contains("not in the roster"), "{err}");
    }

    #[test]
    fn record_without_labels_is_rejected() {
        let f = write(&[r#"{"unit_id": "u", "annotator_id": "x"}"#]);
        assert!(load_annotations(f.path()).is_err());
    }
}

//! Conversion of pre-exported review-platform notes into [`PaperRecord`]s.
//!
//! Input is JSONL, one [`OpenReviewPaper`] per line: the forum id, venue year, the
//! paper's markdown (produced by an external converter) and the forum's notes. Only this
//! subset of each note is read:
//!
//! | field        | use                                                          |
//! |--------------|--------------------------------------------------------------|
//! | `id`         | note identity                                                |
//! | `replyto`    | threading; a review replies to the forum itself              |
//! | `signatures` | `.../Reviewer_xxx` is a reviewer, `.../Authors` the authors  |
//! | `cdate`      | optional creation time, orders turns                         |
//! | `content`    | `title`, `abstract`, `decision`, and review/comment fields   |
//!
//! Content values may be plain strings or `{"value": ...}` wrappers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{Decision, PaperRecord, ReviewThread, Speaker, Turn};
use crate::error::{Error, Result};

/// A turn with its creation time and position in the export, for ordering.
type TimedTurn = (Option<i64>, usize, Turn);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenReviewNote {
    pub id: String,
    #[serde(default)]
    pub replyto: Option<String>,
    #[serde(default)]
    pub signatures: Vec<String>,
    #[serde(default)]
    pub cdate: Option<i64>,
    #[serde(default)]
    pub content: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenReviewPaper {
    pub forum: String,
    pub venue_year: i32,
    #[serde(default)]
    pub body_markdown: String,
    pub notes: Vec<OpenReviewNote>,
}

const TEXT_FIELDS: [(&str, &str); 8] = [
    ("summary", "Summary"),
    ("strengths", "Strengths"),
    ("weaknesses", "Weaknesses"),
    ("questions", "Questions"),
    ("limitations", "Limitations"),
    ("review", ""),
    ("comment", ""),
    ("rebuttal", ""),
];

fn content_str<'a>(note: &'a OpenReviewNote, key: &str) -> Option<&'a str> {
    match note.content.get(key)? {
        Value::String(s) => Some(s),
        Value::Object(o) => o.get("value").and_then(Value::as_str),
        _ => None,
    }
}

/// The note's review or comment text, with section headings for multi-field reviews.
pub fn note_text(note: &OpenReviewNote) -> String {
    TEXT_FIELDS
        .iter()
        .filter_map(|(key, heading)| {
            let text = content_str(note, key)?.trim();
            if text.is_empty() {
                None
            } else if heading.is_empty() {
                Some(text.to_string())
            } else {
                Some(format!("{heading}:\n{text}"))
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn role(note: &OpenReviewNote) -> Option<(Speaker, String)> {
    for sig in &note.signatures {
        let last = sig.rsplit('/').next().unwrap_or(sig);
        if last == "Authors" {
            return Some((Speaker::Author, String::new()));
        }
        if last.starts_with("Reviewer") {
            return Some((Speaker::Reviewer, last.to_string()));
        }
    }
    None
}

fn decision_of(paper: &OpenReviewPaper) -> Decision {
    for note in &paper.notes {
        if let Some(d) = content_str(note, "decision") {
            let d = d.to_lowercase();
            if d.contains("accept") {
                return Decision::Accepted;
            }
            if d.contains("reject") {
                return Decision::Rejected;
            }
        }
    }
    Decision::Unknown
}

impl OpenReviewPaper {
    pub fn to_record(&self) -> std::result::Result<PaperRecord, String> {
        let submission = self
            .notes
            .iter()
            .find(|n| n.id == self.forum)
            .ok_or_else(|| format!("forum `{}` has no submission note", self.forum))?;
        let by_id: BTreeMap<&str, &OpenReviewNote> =
            self.notes.iter().map(|n| (n.id.as_str(), n)).collect();

        // Root review of each note: follow replyto until a note that replies to the forum.
        let root_of = |note: &OpenReviewNote| -> Option<String> {
            let mut cur = note;
            for _ in 0..=self.notes.len() {
                let parent = cur.replyto.as_deref()?;
                if parent == self.forum {
                    return Some(cur.id.clone());
                }
                cur = by_id.get(parent)?;
            }
            None
        };

        let mut threads: Vec<(String, String, Vec<TimedTurn>)> = Vec::new();
        for note in &self.notes {
            if note.replyto.as_deref() == Some(self.forum.as_str()) {
                if let Some((Speaker::Reviewer, reviewer)) = role(note) {
                    if !note_text(note).is_empty() {
                        threads.push((note.id.clone(), reviewer, Vec::new()));
                    }
                }
            }
        }
        for (i, note) in self.notes.iter().enumerate() {
            let Some(root) = root_of(note) else { continue };
            let Some(thread) = threads.iter_mut().find(|t| t.0 == root) else {
                continue;
            };
            let Some((speaker, who)) = role(note) else {
                continue;
            };
            if speaker == Speaker::Reviewer && who != thread.1 {
                continue;
            }
            let text = note_text(note);
            if text.is_empty() {
                continue;
            }
            thread.2.push((
                note.cdate,
                i,
                Turn {
                    speaker,
                    text,
                    timestamp: note.cdate.map(|c| c.to_string()),
                },
            ));
        }

        let threads = threads
            .into_iter()
            .map(|(_, reviewer_id, mut turns)| {
                turns.sort_by_key(|(cdate, i, _)| (cdate.unwrap_or(i64::MIN), *i));
                ReviewThread {
                    reviewer_id,
                    turns: turns.into_iter().map(|(_, _, t)| t).collect(),
                }
            })
            .collect();
        Ok(PaperRecord {
            paper_id: self.forum.clone(),
            title: content_str(submission, "title")
                .unwrap_or_default()
                .trim()
                .to_string(),
            abstract_text: content_str(submission, "abstract")
                .unwrap_or_default()
                .trim()
                .to_string(),
            body_markdown: self.body_markdown.clone(),
            venue_year: self.venue_year,
            decision: decision_of(self),
            threads,
            units: Vec::new(),
        })
    }
}

pub fn load_openreview(path: impl AsRef<Path>) -> Result<Vec<PaperRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            file: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let paper: OpenReviewPaper =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        out.push(paper.to_record().map_err(malformed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    fn export() -> OpenReviewPaper {
        serde_json::from_value(json!({
            "forum": "F1",
            "venue_year": 2024,
            "body_markdown": "# Paper",
            "notes": [
                {"id": "F1", "signatures": ["ICLR.cc/2024/Conference"],
                 "content": {"title": {"value": "A Title"}, "abstract": {"value": "Abs."}}},
                {"id": "R1", "replyto": "F1", "cdate": 10,
                 "signatures": ["ICLR.cc/2024/Conference/Submission1/Reviewer_ab12"],
                 "content": {"weaknesses": {"value": "No ablation."}, "rating": {"value": "5"}}},
                {"id": "C1", "replyto": "R1", "cdate": 20,
                 "signatures": ["ICLR.cc/2024/Conference/Submission1/Authors"],
                 "content": {"comment": "We will add one."}},
                {"id": "C2", "replyto": "C1", "cdate": 30,
                 "signatures": ["ICLR.cc/2024/Conference/Submission1/Reviewer_ab12"],
                 "content": {"comment": "Thanks."}},
                {"id": "X", "replyto": "R1", "cdate": 25,
                 "signatures": ["ICLR.cc/2024/Conference/Submission1/Area_Chair_1"],
                 "content": {"comment": "AC note."}},
                {"id": "D", "replyto": "F1",
                 "signatures": ["ICLR.cc/2024/Conference/Program_Chairs"],
                 "content": {"decision": "Accept (poster)"}}
            ]
        }))
        .unwrap()
    }

    #[test]
    fn builds_threads_from_reply_chains() {
        let r = export().to_record().unwrap();
        assert_eq!(r.title, "A Title");
        assert_eq!(r.decision, Decision::Accepted);
        assert_eq!(r.threads.len(), 1);
        let t = &r.threads[0];
        assert_eq!(t.reviewer_id, "Reviewer_ab12");
        let speakers: Vec<Speaker> = t.turns.iter().map(|t| t.speaker).collect();
        assert_eq!(
            speakers,
            vec![Speaker::Reviewer, Speaker::Author, Speaker::Reviewer]
        );
        assert_eq!(t.turns[0].text, "Weaknesses:\nNo ablation.");
        assert!(r.validate().is_ok());
    }

    #[test]
    fn missing_submission_note_is_an_error() {
        let mut p = export();
        p.notes.remove(0);
        assert!(p.to_record().is_err());
    }
}

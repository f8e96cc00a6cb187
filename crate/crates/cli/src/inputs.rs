//! JSONL input files read by the commands.
//!
//! Model feedback, one object per system and paper:
//!
//! ```json
//! {"system": "sft", "paper_id": "P1", "units": ["text", {"id": "m1", "text": "...", "aspects": ["novelty"]}]}
//! ```
//!
//! Calibration pairs, annotated (`human_match` present, `judged` optional) or population
//! samples (cosine only):
//!
//! ```json
//! {"pair_type": "human_human", "cosine": 0.61, "human_match": true, "judged": true}
//! {"pair_type": "human_model", "cosine": 0.48}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use fbeval_core::consensus::PairType;
use fbeval_core::domain::{AspectTag, FeedbackUnit, PaperRecord, Source, UnitId};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

fn read_jsonl<T: DeserializeOwned>(command: &str, path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| CliError::Input {
            command: command.into(),
            message: format!("{}:{}: {e}", path.display(), i + 1),
        })?);
    }
    Ok(out)
}

pub fn read_papers(command: &str, path: &Path) -> Result<Vec<PaperRecord>, CliError> {
    read_jsonl(command, path)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawUnit {
    Text(String),
    Full {
        #[serde(default)]
        id: Option<String>,
        text: String,
        #[serde(default)]
        aspects: Vec<String>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeedback {
    system: String,
    paper_id: String,
    units: Vec<RawUnit>,
}

/// System name to paper id to generated units, in file order.
pub type ModelFeedback = BTreeMap<String, BTreeMap<String, Vec<FeedbackUnit>>>;

pub fn read_model_feedback(command: &str, path: &Path) -> Result<ModelFeedback, CliError> {
    let bad = |message: String| CliError::Input {
        command: command.into(),
        message: format!("{}: {message}", path.display()),
    };
    let mut out: ModelFeedback = BTreeMap::new();
    for raw in read_jsonl::<RawFeedback>(command, path)? {
        let slot = out.entry(raw.system.clone()).or_default();
        if slot.contains_key(&raw.paper_id) {
            return Err(bad(format!(
                "system {} lists paper {} twice",
                raw.system, raw.paper_id
            )));
        }
        let mut ids = BTreeSet::new();
        let mut units = Vec::with_capacity(raw.units.len());
        for u in raw.units {
            let (id, text, aspects) = match u {
                RawUnit::Text(t) => (None, t, Vec::new()),
                RawUnit::Full { id, text, aspects } => (id, text, aspects),
            };
            let mut unit = FeedbackUnit::new(raw.paper_id.clone(), None, Source::Model, text);
            unit.id = match id {
                Some(id) => UnitId(id),
                None => UnitId::derive(&raw.paper_id, Some(&raw.system), &unit.text),
            };
            for a in aspects {
                unit.aspects
                    .insert(a.parse::<AspectTag>().map_err(|e| bad(e.to_string()))?);
            }
            unit.validate().map_err(|e| bad(e.to_string()))?;
            if !ids.insert(unit.id.clone()) {
                return Err(bad(format!(
                    "duplicate unit {} for system {}",
                    unit.id, raw.system
                )));
            }
            units.push(unit);
        }
        slot.insert(raw.paper_id, units);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationPair {
    pub pair_type: PairType,
    pub cosine: f64,
    #[serde(default)]
    pub human_match: Option<bool>,
    #[serde(default)]
    pub judged: Option<bool>,
}

pub fn read_calibration(command: &str, path: &Path) -> Result<Vec<CalibrationPair>, CliError> {
    let pairs: Vec<CalibrationPair> = read_jsonl(command, path)?;
    for p in &pairs {
        if !(-1.0..=1.0).contains(&p.cosine) {
            return Err(CliError::Input {
                command: command.into(),
                message: format!("{}: cosine {} outside [-1, 1]", path.display(), p.cosine),
            });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_feedback_forms() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.jsonl");
        fs::write(
            &p,
            "{\"system\":\"a\",\"paper_id\":\"P\",\"units\":[\"plain\",{\"id\":\"m1\",\"text\":\"x\",\"aspects\":[\"novelty\"]}]}\n",
        )
        .unwrap();
        let m = read_model_feedback("t", &p).unwrap();
        let units = &m["a"]["P"];
        assert_eq!(units.len(), 2);
        assert!(units[0].id.as_str().starts_with("u_"));
        assert_eq!(units[1].id.as_str(), "m1");
        assert_eq!(units[1].aspects.len(), 1);
    }

    #[test]
    fn malformed_line_is_located() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.jsonl");
        fs::write(
            &p,
            "{\"pair_type\":\"human_human\",\"cosine\":0.2}\n{oops\n",
        )
        .unwrap();
        let err = read_calibration("calibrate", &p).unwrap_err().to_string();
        assert!(err.contains("c.jsonl:2"), "{err}");
    }
}

//! Split of successful generated feedback into consensus-aligned and novel parts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{AspectTag, FeedbackUnit, UnitId};
use crate::error::{Error, Result};

/// Bucket name for units carrying no aspect tag.
pub const NO_ASPECT: &str = "no_aspect";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AspectRates {
    pub units: usize,
    pub aligned: usize,
    pub novel: usize,
    /// Aligned units over all generated units in the run.
    pub aligned_rate: f64,
    pub novel_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total_units: usize,
    pub aligned_rate: f64,
    pub novel_rate: f64,
    /// Keyed by aspect name, plus [`NO_ASPECT`] when any unit lacks tags.
    pub per_aspect: BTreeMap<String, AspectRates>,
}

/// Aligned = matched and successful; novel = unmatched and successful. A unit with several
/// aspects counts toward each of them.
pub fn decompose_novel_aligned(
    model_units: &[FeedbackUnit],
    matched: &BTreeSet<UnitId>,
    success: &BTreeMap<UnitId, bool>,
) -> Result<Decomposition> {
    if model_units.is_empty() {
        return Err(Error::InvalidInput(
            "no generated units to decompose".into(),
        ));
    }
    let total = model_units.len();
    let mut per_aspect: BTreeMap<String, AspectRates> = AspectTag::ALL
        .iter()
        .map(|a| (a.as_str().to_string(), AspectRates::default()))
        .collect();
    let (mut aligned, mut novel) = (0, 0);
    for u in model_units {
        let ok = *success
            .get(&u.id)
            .ok_or_else(|| Error::InvalidInput(format!("no success label for unit {}", u.id)))?;
        let is_matched = matched.contains(&u.id);
        let (a, n) = (ok && is_matched, ok && !is_matched);
        aligned += a as usize;
        novel += n as usize;
        let keys: Vec<String> = if u.aspects.is_empty() {
            vec![NO_ASPECT.to_string()]
        } else {
            u.aspects.iter().map(|t| t.as_str().to_string()).collect()
        };
        for k in keys {
            let r = per_aspect.entry(k).or_default();
            r.units += 1;
            r.aligned += a as usize;
            r.novel += n as usize;
        }
    }
    for r in per_aspect.values_mut() {
        r.aligned_rate = r.aligned as f64 / total as f64;
        r.novel_rate = r.novel as f64 / total as f64;
    }
    Ok(Decomposition {
        total_units: total,
        aligned_rate: aligned as f64 / total as f64,
        novel_rate: novel as f64 / total as f64,
        per_aspect,
    })
}

/// Relative change of a candidate rate over a baseline rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Improvement {
    Ratio(f64),
    /// Baseline rate is zero.
    Undefined,
}

impl std::fmt::Display for Improvement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Improvement::Ratio(r) => write!(f, "{:+.1}%", r * 100.0),
            Improvement::Undefined => f.write_str("N/A"),
        }
    }
}

pub fn relative_improvement(candidate: f64, baseline: f64) -> Improvement {
    if baseline == 0.0 {
        Improvement::Undefined
    } else {
        Improvement::Ratio((candidate - baseline) / baseline)
    }
}

/// Per-aspect improvement of novel and aligned rates over a baseline run.
pub fn improvement_table(
    candidate: &Decomposition,
    baseline: &Decomposition,
) -> BTreeMap<String, (Improvement, Improvement)> {
    candidate
        .per_aspect
        .iter()
        .map(|(k, c)| {
            let b = baseline.per_aspect.get(k).copied().unwrap_or_default();
            (
                k.clone(),
                (
                    relative_improvement(c.aligned_rate, b.aligned_rate),
                    relative_improvement(c.novel_rate, b.novel_rate),
                ),
            )
        })
        .collect()
}

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::{FeedbackUnit, PaperRecord, UnitId};
use crate::error::{Error, Result};
use crate::judge::{names, CallAudit, EndpointConfig, JudgeClient};
use crate::stats::keyed_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionDimension {
    Generic,
    Vague,
    Inaccurate,
    Nonessential,
    Unsupportive,
}

impl CorruptionDimension {
    pub const ALL: [CorruptionDimension; 5] = [
        CorruptionDimension::Generic,
        CorruptionDimension::Vague,
        CorruptionDimension::Inaccurate,
        CorruptionDimension::Nonessential,
        CorruptionDimension::Unsupportive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionDimension::Generic => "generic",
            CorruptionDimension::Vague => "vague",
            CorruptionDimension::Inaccurate => "inaccurate",
            CorruptionDimension::Nonessential => "nonessential",
            CorruptionDimension::Unsupportive => "unsupportive",
        }
    }
}

impl FromStr for CorruptionDimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' ', '_'], "");
        CorruptionDimension::ALL
            .into_iter()
            .find(|d| d.as_str() == norm)
            .ok_or_else(|| Error::Label {
                field: "corruption_dimension",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for CorruptionDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub predicted_dimension: CorruptionDimension,
    pub target_degradation: u8,
    pub collateral_preservation: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionVariant {
    pub source_unit_id: UnitId,
    pub dimension: CorruptionDimension,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<Verification>,
}

impl CorruptionVariant {
    /// Correct dimension predicted, and both scores at least 2.
    pub fn is_kept(&self) -> bool {
        self.verification.as_ref().is_some_and(|v| {
            v.predicted_dimension == self.dimension
                && v.target_degradation >= 2
                && v.collateral_preservation >= 2
        })
    }
}

/// Five rewrites of a successful unit, one per corruption dimension.
pub fn corrupt(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    unit: &FeedbackUnit,
    paper: &PaperRecord,
) -> Result<(Vec<CorruptionVariant>, CallAudit)> {
    if !unit.is_successful() {
        return Err(Error::Precondition(format!(
            "unit {} is not successful; only valid and actionable feedback is corrupted",
            unit.id
        )));
    }
    let mut b = BTreeMap::new();
    b.insert("title".to_string(), paper.title.clone());
    b.insert("abstract".to_string(), paper.abstract_text.clone());
    b.insert("feedback".to_string(), unit.text.clone());
    let r = client.complete(endpoint, names::CORRUPT_FEEDBACK, &b, unit.id.as_str())?;
    let mut variants = Vec::with_capacity(5);
    for d in CorruptionDimension::ALL {
        let text = r.parsed[d.as_str()].as_str().unwrap_or("").trim();
        if text.is_empty() {
            return Err(Error::JudgeFormat {
                template: names::CORRUPT_FEEDBACK.into(),
                message: format!("rewrite for `{d}` is missing or empty"),
                raw_text: r.raw_text.clone(),
            });
        }
        variants.push(CorruptionVariant {
            source_unit_id: unit.id.clone(),
            dimension: d,
            text: text.to_string(),
            verification: None,
        });
    }
    Ok((variants, r.audit(names::CORRUPT_FEEDBACK, unit.id.as_str())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    /// Every variant with its verification filled, in dimension order.
    pub verified: Vec<CorruptionVariant>,
    pub kept: Vec<CorruptionVariant>,
    /// Dimensions in the order shown to the judge.
    pub presented_order: Vec<CorruptionDimension>,
    pub order_seed: u64,
    pub audit: CallAudit,
}

/// Verifies the variants of one source unit in a seeded random order, then filters.
pub fn verify_and_filter(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    unit: &FeedbackUnit,
    paper: &PaperRecord,
    variants: &[CorruptionVariant],
    seed: u64,
) -> Result<VerifyOutcome> {
    if variants.is_empty() || variants.iter().any(|v| v.source_unit_id != unit.id) {
        return Err(Error::Precondition(format!(
            "variants to verify must be nonempty and derived from unit {}",
            unit.id
        )));
    }
    let mut order: Vec<usize> = (0..variants.len()).collect();
    order.shuffle(&mut keyed_rng(seed, unit.id.as_str()));
    let rewrites = order
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("[{i}] {}", variants[v].text))
        .collect::<Vec<_>>()
        .join("\n\n");
    let mut b = BTreeMap::new();
    b.insert("title".to_string(), paper.title.clone());
    b.insert("abstract".to_string(), paper.abstract_text.clone());
    b.insert("feedback".to_string(), unit.text.clone());
    b.insert("rewrites".to_string(), rewrites);
    let r = client.complete(endpoint, names::VERIFY_CORRUPTION, &b, unit.id.as_str())?;
    let format_err = |message: String| Error::JudgeFormat {
        template: names::VERIFY_CORRUPTION.into(),
        message,
        raw_text: r.raw_text.clone(),
    };

    let mut verified: Vec<CorruptionVariant> = variants.to_vec();
    let mut filled = vec![false; variants.len()];
    for entry in r.parsed["results"].as_array().into_iter().flatten() {
        let shown = entry["rewrite_index"].as_u64().unwrap_or(u64::MAX) as usize;
        let Some(&v) = order.get(shown) else {
            return Err(format_err(format!("rewrite_index {shown} is out of range")));
        };
        if std::mem::replace(&mut filled[v], true) {
            return Err(format_err(format!("rewrite_index {shown} appears twice")));
        }
        verified[v].verification = Some(Verification {
            predicted_dimension: entry["predicted_dimension"]
                .as_str()
                .unwrap_or("")
                .parse()?,
            target_degradation: entry["target_degradation_score"].as_u64().unwrap_or(0) as u8,
            collateral_preservation: entry["collateral_preservation_score"].as_u64().unwrap_or(0)
                as u8,
            reasoning: entry["reasoning"].as_str().map(str::to_string),
        });
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(format_err(format!(
            "no verdict for the `{}` rewrite",
            variants[missing].dimension
        )));
    }
    Ok(VerifyOutcome {
        kept: apply_filter(&verified),
        presented_order: order.iter().map(|&i| variants[i].dimension).collect(),
        verified,
        order_seed: seed,
        audit: r.audit(names::VERIFY_CORRUPTION, unit.id.as_str()),
    })
}

/// The verified variants that pass [`CorruptionVariant::is_kept`], in input order.
pub fn apply_filter(variants: &[CorruptionVariant]) -> Vec<CorruptionVariant> {
    variants.iter().filter(|v| v.is_kept()).cloned().collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub verified: usize,
    pub correct_prediction: usize,
    pub kept: usize,
    pub accuracy: f64,
    pub mean_target_degradation: f64,
    pub mean_collateral_preservation: f64,
}

/// Per-dimension prediction accuracy, mean scores and keep counts over verified variants.
pub fn filter_stats(
    variants: &[CorruptionVariant],
) -> BTreeMap<CorruptionDimension, DimensionStats> {
    let mut out: BTreeMap<CorruptionDimension, DimensionStats> = BTreeMap::new();
    for v in variants {
        let Some(ver) = &v.verification else { continue };
        let s = out.entry(v.dimension).or_default();
        s.verified += 1;
        s.correct_prediction += usize::from(ver.predicted_dimension == v.dimension);
        s.kept += usize::from(v.is_kept());
        s.mean_target_degradation += f64::from(ver.target_degradation);
        s.mean_collateral_preservation += f64::from(ver.collateral_preservation);
    }
    for s in out.values_mut() {
        let n = s.verified as f64;
        s.accuracy = s.correct_prediction as f64 / n;
        s.mean_target_degradation /= n;
        s.mean_collateral_preservation /= n;
    }
    out
}

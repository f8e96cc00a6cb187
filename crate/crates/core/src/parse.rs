//! Review threads to labeled feedback units, and agreement of those labels with humans.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{
    AspectTag, AuthorAction, FeedbackDimension, FeedbackUnit, PaperRecord, ReviewThread, Source,
    Validity,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingest::AnnotationRecord;
use crate::judge::{names, CallAudit, EndpointConfig, JudgeClient};
use crate::stats::{kappa_from_pairs, pabak};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub paper_id: String,
    pub reviewer_id: String,
    pub units: Vec<FeedbackUnit>,
    /// Praise-only comments the judge skipped.
    pub dropped_note: u64,
    /// Units whose normalized text repeated an earlier unit of the same thread.
    pub merged_duplicates: usize,
    pub audit: CallAudit,
}

/// Stub key for a thread: `<paper_id>|<reviewer_id>`.
pub fn thread_key(paper_id: &str, reviewer_id: &str) -> String {
    format!("{paper_id}|{reviewer_id}")
}

/// Splits one thread into labeled units with a single judge call.
pub fn parse_thread(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    record: &PaperRecord,
    thread: &ReviewThread,
) -> Result<ParseResult> {
    if thread.turns.is_empty() {
        return Err(Error::Precondition(format!(
            "paper {}: thread of reviewer {} has no turns",
            record.paper_id, thread.reviewer_id
        )));
    }
    let mut bindings = BTreeMap::new();
    bindings.insert("conversation_text".to_string(), thread.conversation_text());
    let key = thread_key(&record.paper_id, &thread.reviewer_id);
    let response = client.complete(endpoint, names::PARSE_THREAD, &bindings, &key)?;

    let mut units = Vec::new();
    let mut seen = BTreeSet::new();
    let mut merged_duplicates = 0;
    let raw_units = response.parsed["units"]
        .as_array()
        .cloned()
        .unwrap_or_default();
    for raw in &raw_units {
        let unit =
            unit_from_judge(&record.paper_id, &thread.reviewer_id, raw).map_err(|e| match e {
                Error::JudgeFormat { message, .. } => Error::JudgeFormat {
                    template: names::PARSE_THREAD.into(),
                    message: format!("{key}: {message}"),
                    raw_text: response.raw_text.clone(),
                },
                other => other,
            })?;
        if seen.insert(unit.id.clone()) {
            units.push(unit);
        } else {
            merged_duplicates += 1;
        }
    }
    Ok(ParseResult {
        paper_id: record.paper_id.clone(),
        reviewer_id: thread.reviewer_id.clone(),
        units,
        dropped_note: response.parsed["skipped_positive"].as_u64().unwrap_or(0),
        merged_duplicates,
        audit: response.audit(names::PARSE_THREAD, key),
    })
}

/// Maps one judge unit object onto the closed label enums.
pub fn unit_from_judge(paper_id: &str, reviewer_id: &str, raw: &Value) -> Result<FeedbackUnit> {
    let text = raw["feedback_text"].as_str().unwrap_or("").trim();
    if text.is_empty() {
        return Err(Error::JudgeFormat {
            template: names::PARSE_THREAD.into(),
            message: "unit with empty feedback_text".into(),
            raw_text: raw.to_string(),
        });
    }
    let validity = Validity::from_str(raw["validity"].as_str().unwrap_or(""))?;
    let action = AuthorAction::from_str(raw["author_action"].as_str().unwrap_or(""))?;
    let mut unit = FeedbackUnit::new(paper_id, Some(reviewer_id.to_string()), Source::Human, text)
        .with_labels(validity, action);
    unit.author_response_text = raw["author_response_text"]
        .as_str()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    if let Some(aspects) = raw["aspects"].as_array() {
        for a in aspects {
            unit.aspects
                .insert(AspectTag::from_str(a.as_str().unwrap_or(""))?);
        }
    }
    if let Some(dims) = raw["dimensions"].as_object() {
        for d in FeedbackDimension::ALL {
            if dims
                .get(d.as_str())
                .and_then(Value::as_str)
                .is_some_and(|s| !s.trim().is_empty())
            {
                unit.dimensions.insert(d);
            }
        }
    }
    Ok(unit)
}

/// Parses every thread of `record` and returns the record with its human units replaced.
pub fn parse_paper(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    record: &PaperRecord,
) -> Result<(PaperRecord, Vec<ParseResult>)> {
    let mut results = Vec::with_capacity(record.threads.len());
    for thread in &record.threads {
        results.push(parse_thread(client, endpoint, record, thread)?);
    }
    let mut out = record.clone();
    out.units.retain(|u| u.source != Source::Human);
    let mut ids: BTreeSet<_> = out.units.iter().map(|u| u.id.clone()).collect();
    for r in &results {
        for u in &r.units {
            if ids.insert(u.id.clone()) {
                out.units.push(u.clone());
            }
        }
    }
    out.validate()?;
    Ok((out, results))
}

/// Parses papers in parallel; output follows paper_id order.
pub fn parse_papers(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    records: &[PaperRecord],
    exec: Exec,
) -> Result<Vec<(PaperRecord, Vec<ParseResult>)>> {
    let mut sorted: Vec<&PaperRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    exec.try_map(&sorted, |r| parse_paper(client, endpoint, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Validity,
    Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// First two annotators (by id) of each unit.
    InterAnnotator,
    /// Judge label against the human majority vote.
    JudgeVsHuman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub label: LabelKind,
    pub comparison: Comparison,
    pub n: usize,
    pub observed_agreement: f64,
    pub pabak: f64,
    pub cohen_kappa: f64,
    pub kappa_degenerate: bool,
}

fn row<L: Ord + Clone>(
    label: LabelKind,
    comparison: Comparison,
    pairs: &[(L, L)],
) -> Result<Option<AgreementRow>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let k = kappa_from_pairs(pairs)?;
    Ok(Some(AgreementRow {
        label,
        comparison,
        n: pairs.len(),
        observed_agreement: k.observed_agreement,
        pabak: pabak(k.observed_agreement)?,
        cohen_kappa: k.kappa,
        kappa_degenerate: k.degenerate,
    }))
}

fn inter_pairs<L: Ord + Clone>(
    annotations: &[AnnotationRecord],
    f: impl Fn(&AnnotationRecord) -> Option<L>,
) -> Vec<(L, L)> {
    let mut by_unit: BTreeMap<&str, BTreeMap<&str, L>> = BTreeMap::new();
    for a in annotations {
        if let Some(l) = f(a) {
            by_unit
                .entry(a.unit_id.as_str())
                .or_default()
                .entry(a.annotator_id.as_str())
                .or_insert(l);
        }
    }
    by_unit
        .into_values()
        .filter_map(|m| {
            let mut it = m.into_values();
            Some((it.next()?, it.next()?))
        })
        .collect()
}

fn judge_pairs<L: Ord + Clone>(
    annotations: &[AnnotationRecord],
    reference: &[FeedbackUnit],
    human: impl Fn(&AnnotationRecord) -> Option<L>,
    judge: impl Fn(&FeedbackUnit) -> Option<L>,
) -> Vec<(L, L)> {
    let votes = crate::ingest::majority(annotations, human);
    let mut refs: Vec<&FeedbackUnit> = reference.iter().collect();
    refs.sort_by(|a, b| a.id.cmp(&b.id));
    refs.into_iter()
        .filter_map(|u| {
            let h = votes.get(u.id.as_str())?.clone()?;
            Some((judge(u)?, h))
        })
        .collect()
}

/// Agreement rows for validity and action labels.
///
/// Inter-annotator rows need at least two annotators on a unit; judge rows compare each
/// reference unit's label with the human majority (ties skipped). Rows with no data are
/// omitted, and an error is returned when no row has data.
pub fn agreement_report(
    annotations: &[AnnotationRecord],
    reference: &[FeedbackUnit],
) -> Result<Vec<AgreementRow>> {
    let mut rows = Vec::new();
    rows.extend(row(
        LabelKind::Validity,
        Comparison::InterAnnotator,
        &inter_pairs(annotations, |a| a.validity),
    )?);
    rows.extend(row(
        LabelKind::Validity,
        Comparison::JudgeVsHuman,
        &judge_pairs(annotations, reference, |a| a.validity, |u| u.validity),
    )?);
    rows.extend(row(
        LabelKind::Action,
        Comparison::InterAnnotator,
        &inter_pairs(annotations, |a| a.action),
    )?);
    rows.extend(row(
        LabelKind::Action,
        Comparison::JudgeVsHuman,
        &judge_pairs(annotations, reference, |a| a.action, |u| u.action),
    )?);
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "agreement report has no comparable labels (n = 0)".into(),
        ));
    }
    Ok(rows)
}

//! Consensus sets of human feedback and matching-based scoring of generated feedback.
//!
//! Human units of a paper are paired across reviewers, prefiltered by embedding cosine and
//! judged for a shared concrete point. Successful human units with a matching unit from
//! another reviewer form the consensus set. Generated units are then matched against it:
//! precision is the share of generated units matching a consensus unit, recall the share
//! of consensus units matched by some generated unit.

mod decompose;
mod strata;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use decompose::{
    decompose_novel_aligned, improvement_table, relative_improvement, AspectRates, Decomposition,
    Improvement, NO_ASPECT,
};
pub use strata::{
    calibrate_threshold, distribution_weighted, distribution_weighted_rows, JudgeMetrics, Stratum,
    StratumTable, DEFAULT_BOUNDARIES, ROUNDED_WEIGHT_TOLERANCE,
};

use crate::domain::{FeedbackUnit, Source, UnitId};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::judge::{names, CallAudit, EndpointConfig, JudgeClient, TextVectors};
use crate::stats::{cyclic_subset, CIReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairType {
    HumanHuman,
    HumanModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEdge {
    /// The human unit for human–model pairs; the smaller id for human–human pairs.
    pub left_unit_id: UnitId,
    pub right_unit_id: UnitId,
    pub pair_type: PairType,
    pub cosine: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl MatchEdge {
    /// `<a>|<b>` with the ids in sorted order; also the stub key of the match call.
    pub fn pair_key(&self) -> String {
        pair_key(&self.left_unit_id, &self.right_unit_id)
    }

    pub fn is_match(&self) -> bool {
        self.judged == Some(true)
    }
}

pub fn pair_key(a: &UnitId, b: &UnitId) -> String {
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

/// Candidate human–human pairs from distinct reviewers with cosine at or above `threshold`.
pub fn prefilter_human_pairs(
    units: &[FeedbackUnit],
    vectors: &TextVectors,
    threshold: f64,
) -> Result<Vec<MatchEdge>> {
    let humans: Vec<&FeedbackUnit> = units.iter().filter(|u| u.source == Source::Human).collect();
    let mut out = Vec::new();
    for (i, a) in humans.iter().enumerate() {
        for b in &humans[i + 1..] {
            if a.reviewer_id.is_none() || a.reviewer_id == b.reviewer_id || a.id == b.id {
                continue;
            }
            let cosine = vectors.cosine(&a.text, &b.text)?;
            if cosine >= threshold {
                let (l, r) = if a.id <= b.id { (a, b) } else { (b, a) };
                out.push(MatchEdge {
                    left_unit_id: l.id.clone(),
                    right_unit_id: r.id.clone(),
                    pair_type: PairType::HumanHuman,
                    cosine,
                    judged: None,
                    explanation: None,
                });
            }
        }
    }
    out.sort_by_key(MatchEdge::pair_key);
    Ok(out)
}

/// Candidate human–model pairs with cosine at or above `threshold`.
pub fn prefilter_model_pairs(
    human: &[FeedbackUnit],
    model: &[FeedbackUnit],
    vectors: &TextVectors,
    threshold: f64,
) -> Result<Vec<MatchEdge>> {
    let mut out = Vec::new();
    for h in human.iter().filter(|u| u.source == Source::Human) {
        for m in model {
            let cosine = vectors.cosine(&h.text, &m.text)?;
            if cosine >= threshold {
                out.push(MatchEdge {
                    left_unit_id: h.id.clone(),
                    right_unit_id: m.id.clone(),
                    pair_type: PairType::HumanModel,
                    cosine,
                    judged: None,
                    explanation: None,
                });
            }
        }
    }
    out.sort_by_key(MatchEdge::pair_key);
    Ok(out)
}

fn verdict(v: &serde_json::Value) -> Option<bool> {
    match &v["match"] {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::Number(n) => n.as_i64().map(|n| n == 1),
        serde_json::Value::String(s) => match s.trim() {
            "1" => Some(true),
            "0" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

/// Judges one prefiltered edge. Texts are shown in sorted-id order so the call does not
/// depend on edge orientation.
pub fn judge_match(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    edge: &MatchEdge,
    abstract_text: &str,
    texts: &BTreeMap<UnitId, String>,
) -> Result<(MatchEdge, CallAudit)> {
    let text = |id: &UnitId| {
        texts
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("no text for unit {id}")))
    };
    let (first, second) = if edge.left_unit_id <= edge.right_unit_id {
        (&edge.left_unit_id, &edge.right_unit_id)
    } else {
        (&edge.right_unit_id, &edge.left_unit_id)
    };
    let mut b = BTreeMap::new();
    b.insert("abstract".to_string(), abstract_text.to_string());
    b.insert("feedback1".to_string(), text(first)?.clone());
    b.insert("feedback2".to_string(), text(second)?.clone());
    let key = edge.pair_key();
    let r = client.complete(endpoint, names::MATCH_FEEDBACK, &b, &key)?;
    let entries: Vec<&serde_json::Value> = match &r.parsed {
        serde_json::Value::Array(items) => items.iter().collect(),
        v => vec![v],
    };
    let mut judged = false;
    let mut explanations = Vec::new();
    for e in entries {
        judged |= verdict(e).ok_or_else(|| Error::JudgeFormat {
            template: names::MATCH_FEEDBACK.into(),
            message: format!("{key}: unreadable match verdict"),
            raw_text: r.raw_text.clone(),
        })?;
        if let Some(x) = e["explanation"].as_str() {
            explanations.push(x.trim().to_string());
        }
    }
    let mut out = edge.clone();
    out.judged = Some(judged);
    out.explanation = (!explanations.is_empty()).then(|| explanations.join(" "));
    Ok((out, r.audit(names::MATCH_FEEDBACK, key)))
}

/// Judges every edge (in parallel under `exec`); output keeps input order.
pub fn judge_edges(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    edges: &[MatchEdge],
    abstract_text: &str,
    texts: &BTreeMap<UnitId, String>,
    exec: Exec,
) -> Result<(Vec<MatchEdge>, Vec<CallAudit>)> {
    let judged = exec.try_map(edges, |e| {
        judge_match(client, endpoint, e, abstract_text, texts)
    })?;
    Ok(judged.into_iter().unzip())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusOptions {
    /// Also require the matching unit from the other reviewer to be successful.
    pub partner_must_succeed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusSet {
    pub paper_id: String,
    pub members: BTreeSet<UnitId>,
    /// Members grouped by connected judged-true edges among members.
    pub clusters: Vec<BTreeSet<UnitId>>,
}

/// Successful human units with a judged-true edge to a unit from another reviewer.
pub fn build_consensus(
    paper_id: &str,
    units: &[FeedbackUnit],
    edges: &[MatchEdge],
    options: ConsensusOptions,
) -> ConsensusSet {
    let by_id: BTreeMap<&UnitId, &FeedbackUnit> = units
        .iter()
        .filter(|u| u.source == Source::Human)
        .map(|u| (&u.id, u))
        .collect();
    let mut members = BTreeSet::new();
    let mut links: Vec<(&UnitId, &UnitId)> = Vec::new();
    for e in edges
        .iter()
        .filter(|e| e.pair_type == PairType::HumanHuman && e.is_match())
    {
        let (Some(a), Some(b)) = (by_id.get(&e.left_unit_id), by_id.get(&e.right_unit_id)) else {
            continue;
        };
        if a.reviewer_id.is_none() || a.reviewer_id == b.reviewer_id {
            continue;
        }
        for (x, y) in [(a, b), (b, a)] {
            if x.is_successful() && (!options.partner_must_succeed || y.is_successful()) {
                members.insert(x.id.clone());
            }
        }
        links.push((&a.id, &b.id));
    }
    let clusters = components(&members, &links);
    ConsensusSet {
        paper_id: paper_id.to_string(),
        members,
        clusters,
    }
}

fn components(members: &BTreeSet<UnitId>, links: &[(&UnitId, &UnitId)]) -> Vec<BTreeSet<UnitId>> {
    let mut cluster_of: BTreeMap<&UnitId, usize> =
        members.iter().enumerate().map(|(i, m)| (m, i)).collect();
    for &(a, b) in links {
        let (Some(&ca), Some(&cb)) = (cluster_of.get(a), cluster_of.get(b)) else {
            continue;
        };
        if ca != cb {
            let (keep, drop) = (ca.min(cb), ca.max(cb));
            for c in cluster_of.values_mut() {
                if *c == drop {
                    *c = keep;
                }
            }
        }
    }
    let mut grouped: BTreeMap<usize, BTreeSet<UnitId>> = BTreeMap::new();
    for (m, c) in cluster_of {
        grouped.entry(c).or_default().insert(m.clone());
    }
    grouped.into_values().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Each consensus member counts once.
    #[default]
    Item,
    /// Each connected cluster of members counts once.
    Cluster,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Pool counts over papers, then take ratios.
    #[default]
    Micro,
    /// Average per-paper metrics.
    Macro,
}

/// Raw counts behind one paper's precision and recall.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matched_model: usize,
    pub model_units: usize,
    pub matched_consensus: usize,
    pub consensus_units: usize,
}

impl MatchCounts {
    /// Precision with no generated units is 0.
    pub fn precision(&self) -> f64 {
        ratio(self.matched_model, self.model_units)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched_consensus, self.consensus_units)
    }

    pub fn f1(&self) -> f64 {
        strata::f1(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub matched_model_units: BTreeSet<UnitId>,
    pub matched_consensus_units: BTreeSet<UnitId>,
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores generated units against a consensus set using judged human–model edges.
pub fn score_model(
    consensus: &ConsensusSet,
    model_units: &[UnitId],
    edges: &[MatchEdge],
    granularity: Granularity,
) -> Result<MatchScore> {
    if consensus.members.is_empty() {
        return Err(Error::Precondition(format!(
            "paper {} has no consensus feedback; exclude it before scoring",
            consensus.paper_id
        )));
    }
    let model: BTreeSet<&UnitId> = model_units.iter().collect();
    let mut matched_model = BTreeSet::new();
    let mut matched_consensus = BTreeSet::new();
    for e in edges
        .iter()
        .filter(|e| e.pair_type == PairType::HumanModel && e.is_match())
    {
        if consensus.members.contains(&e.left_unit_id) && model.contains(&e.right_unit_id) {
            matched_model.insert(e.right_unit_id.clone());
            matched_consensus.insert(e.left_unit_id.clone());
        }
    }
    let (matched_c, total_c) = match granularity {
        Granularity::Item => (matched_consensus.len(), consensus.members.len()),
        Granularity::Cluster => (
            consensus
                .clusters
                .iter()
                .filter(|c| c.iter().any(|m| matched_consensus.contains(m)))
                .count(),
            consensus.clusters.len(),
        ),
    };
    let counts = MatchCounts {
        matched_model: matched_model.len(),
        model_units: model.len(),
        matched_consensus: matched_c,
        consensus_units: total_c,
    };
    Ok(MatchScore {
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        matched_model_units: matched_model,
        matched_consensus_units: matched_consensus,
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn aggregate(counts: &[MatchCounts], aggregation: Aggregation) -> Result<MatchMetrics> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("no papers to aggregate".into()));
    }
    Ok(match aggregation {
        Aggregation::Micro => {
            let mut total = MatchCounts::default();
            for c in counts {
                total.matched_model += c.matched_model;
                total.model_units += c.model_units;
                total.matched_consensus += c.matched_consensus;
                total.consensus_units += c.consensus_units;
            }
            MatchMetrics {
                precision: total.precision(),
                recall: total.recall(),
                f1: total.f1(),
            }
        }
        Aggregation::Macro => {
            let n = counts.len() as f64;
            MatchMetrics {
                precision: counts.iter().map(MatchCounts::precision).sum::<f64>() / n,
                recall: counts.iter().map(MatchCounts::recall).sum::<f64>() / n,
                f1: counts.iter().map(MatchCounts::f1).sum::<f64>() / n,
            }
        }
    })
}

/// Everything needed to score one paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperMatchData {
    pub consensus: ConsensusSet,
    /// Generated units in a fixed order; subsampling indexes into this list.
    pub model_units: Vec<UnitId>,
    pub edges: Vec<MatchEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchBootstrap {
    pub precision: CIReport,
    pub recall: CIReport,
    pub f1: CIReport,
    pub papers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchEvalConfig {
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
    pub granularity: Granularity,
    pub aggregation: Aggregation,
}

/// Bootstrap of precision/recall/F1 over papers with nonempty consensus, subsampling `k`
/// generated units per paper in each iteration.
pub fn bootstrap_match(
    papers: &[PaperMatchData],
    cfg: &MatchEvalConfig,
    exec: Exec,
) -> Result<MatchBootstrap> {
    if cfg.iterations < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 iterations, got {}",
            cfg.iterations
        )));
    }
    let papers: Vec<&PaperMatchData> = papers
        .iter()
        .filter(|p| !p.consensus.members.is_empty())
        .collect();
    if papers.is_empty() {
        return Err(Error::InvalidInput(
            "no paper has consensus feedback".into(),
        ));
    }
    let draws = exec
        .map_range(cfg.iterations, |b| -> Result<MatchMetrics> {
            let counts = papers
                .iter()
                .map(|p| {
                    let idx = cyclic_subset(
                        p.model_units.len(),
                        cfg.k,
                        cfg.seed,
                        &p.consensus.paper_id,
                        b,
                    );
                    let subset: Vec<UnitId> =
                        idx.into_iter().map(|i| p.model_units[i].clone()).collect();
                    score_model(&p.consensus, &subset, &p.edges, cfg.granularity).map(|s| s.counts)
                })
                .collect::<Result<Vec<_>>>()?;
            aggregate(&counts, cfg.aggregation)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&MatchMetrics) -> f64| draws.iter().map(f).collect::<Vec<f64>>();
    Ok(MatchBootstrap {
        precision: CIReport::from_draws(&col(|m| m.precision), cfg.seed)?,
        recall: CIReport::from_draws(&col(|m| m.recall), cfg.seed)?,
        f1: CIReport::from_draws(&col(|m| m.f1), cfg.seed)?,
        papers: papers.len(),
    })
}

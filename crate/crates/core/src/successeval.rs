//! Success-rate proxy for generated feedback.
//!
//! Each generated unit is scored on five quality dimensions by a judge and sent to an
//! author-response predictor. A unit counts as a success when it clears the quality filter
//! and the predicted authors agree with it and act on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{is_actionable, AuthorAction, FeedbackUnit, PaperRecord, UnitId, Validity};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::judge::{names, CallAudit, EndpointConfig, JudgeClient};
use crate::stats::{cyclic_subset, CIReport};

/// Characters of the paper body shown to the scorer and the predictor.
pub const BODY_EXCERPT_CHARS: usize = 12_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityScores {
    pub accuracy: u8,
    pub prioritisation: u8,
    pub constructive_tone: u8,
    pub paper_specific_grounding: u8,
    pub actionability: u8,
    #[serde(default)]
    pub justifications: BTreeMap<String, String>,
}

impl QualityScores {
    pub fn uniform(score: u8) -> Self {
        QualityScores {
            accuracy: score,
            prioritisation: score,
            constructive_tone: score,
            paper_specific_grounding: score,
            actionability: score,
            justifications: BTreeMap::new(),
        }
    }

    pub fn get(&self, dimension: &str) -> Option<u8> {
        Some(match dimension {
            "accuracy" => self.accuracy,
            "prioritisation" => self.prioritisation,
            "constructive_tone" => self.constructive_tone,
            "paper_specific_grounding" => self.paper_specific_grounding,
            "actionability" => self.actionability,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for k in crate::judge::prompts::QUALITY_KEYS {
            let s = self.get(k).unwrap_or(0);
            if !(1..=5).contains(&s) {
                return Err(Error::InvalidInput(format!("{k} score {s} outside 1..5")));
            }
        }
        Ok(())
    }
}

/// Minimum scores on the four filtering dimensions. Actionability never filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityThresholds {
    pub accuracy: f64,
    pub paper_specific_grounding: f64,
    pub constructive_tone: f64,
    pub prioritisation: f64,
}

impl Default for QualityThresholds {
    /// Mean judge scores of human reviewer feedback.
    fn default() -> Self {
        QualityThresholds {
            accuracy: 4.37,
            paper_specific_grounding: 4.36,
            constructive_tone: 4.62,
            prioritisation: 4.44,
        }
    }
}

impl QualityThresholds {
    pub fn uniform(v: f64) -> Self {
        QualityThresholds {
            accuracy: v,
            paper_specific_grounding: v,
            constructive_tone: v,
            prioritisation: v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("accuracy", self.accuracy),
            ("paper_specific_grounding", self.paper_specific_grounding),
            ("constructive_tone", self.constructive_tone),
            ("prioritisation", self.prioritisation),
        ] {
            if !(1.0..=5.0).contains(&v) {
                return Err(Error::Config(format!(
                    "quality threshold {k} = {v} outside [1, 5]"
                )));
            }
        }
        Ok(())
    }
}

pub fn passes_quality(scores: &QualityScores, t: &QualityThresholds) -> bool {
    f64::from(scores.accuracy) >= t.accuracy
        && f64::from(scores.paper_specific_grounding) >= t.paper_specific_grounding
        && f64::from(scores.constructive_tone) >= t.constructive_tone
        && f64::from(scores.prioritisation) >= t.prioritisation
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedResponse {
    pub unit_id: UnitId,
    pub predicted_validity: Validity,
    pub predicted_action: AuthorAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_response_text: Option<String>,
}

fn paper_excerpt(paper: &PaperRecord) -> String {
    let body: String = paper
        .body_markdown
        .chars()
        .take(BODY_EXCERPT_CHARS)
        .collect();
    format!("# {}\n\n{}\n\n{}", paper.title, paper.abstract_text, body)
}

fn bindings(unit: &FeedbackUnit, paper: &PaperRecord) -> BTreeMap<String, String> {
    let mut b = BTreeMap::new();
    b.insert("venue".to_string(), format!("ICLR {}", paper.venue_year));
    b.insert("paper_excerpt".to_string(), paper_excerpt(paper));
    b.insert("feedback".to_string(), unit.text.clone());
    b
}

pub fn score_quality(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    unit: &FeedbackUnit,
    paper: &PaperRecord,
) -> Result<(QualityScores, CallAudit)> {
    let r = client.complete(
        endpoint,
        names::QUALITY_SCORE,
        &bindings(unit, paper),
        unit.id.as_str(),
    )?;
    let bad = |message: String| Error::JudgeFormat {
        template: names::QUALITY_SCORE.into(),
        message,
        raw_text: r.raw_text.clone(),
    };
    let mut values = BTreeMap::new();
    let mut justifications = BTreeMap::new();
    for k in crate::judge::prompts::QUALITY_KEYS {
        let entry = &r.parsed["scores"][k];
        let score = entry["score"]
            .as_i64()
            .filter(|s| (1..=5).contains(s))
            .ok_or_else(|| bad(format!("{k} score missing or outside 1..5")))?;
        values.insert(k, score as u8);
        if let Some(j) = entry["justification"].as_str() {
            justifications.insert(k.to_string(), j.trim().to_string());
        }
    }
    let scores = QualityScores {
        accuracy: values["accuracy"],
        prioritisation: values["prioritisation"],
        constructive_tone: values["constructive_tone"],
        paper_specific_grounding: values["paper_specific_grounding"],
        actionability: values["actionability"],
        justifications,
    };
    Ok((scores, r.audit(names::QUALITY_SCORE, unit.id.as_str())))
}

pub fn predict_response(
    client: &JudgeClient,
    endpoint: &EndpointConfig,
    unit: &FeedbackUnit,
    paper: &PaperRecord,
) -> Result<(PredictedResponse, CallAudit)> {
    let r = client.complete(
        endpoint,
        names::PREDICT_RESPONSE,
        &bindings(unit, paper),
        unit.id.as_str(),
    )?;
    let field = |k: &str| r.parsed[k].as_str().unwrap_or_default().to_string();
    let p = PredictedResponse {
        unit_id: unit.id.clone(),
        predicted_validity: field("validity").parse()?,
        predicted_action: field("author_action").parse()?,
        predicted_response_text: r.parsed["author_response"]
            .as_str()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string),
    };
    Ok((p, r.audit(names::PREDICT_RESPONSE, unit.id.as_str())))
}

/// One generated unit with its quality scores and predicted author response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedUnit {
    pub unit_id: UnitId,
    pub quality: QualityScores,
    pub prediction: PredictedResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperEvaluation {
    pub paper_id: String,
    /// Units in a fixed order; subsampling indexes into this list.
    pub units: Vec<EvaluatedUnit>,
}

/// Scores and predicts every unit of a paper, in parallel under `exec`.
pub fn evaluate_paper(
    client: &JudgeClient,
    quality_endpoint: &EndpointConfig,
    predict_endpoint: &EndpointConfig,
    paper: &PaperRecord,
    units: &[FeedbackUnit],
    exec: Exec,
) -> Result<(PaperEvaluation, Vec<CallAudit>)> {
    let done = exec.try_map(units, |u| -> Result<_> {
        let (quality, qa) = score_quality(client, quality_endpoint, u, paper)?;
        let (prediction, pa) = predict_response(client, predict_endpoint, u, paper)?;
        Ok((
            EvaluatedUnit {
                unit_id: u.id.clone(),
                quality,
                prediction,
            },
            [qa, pa],
        ))
    })?;
    let mut evaluated = Vec::with_capacity(done.len());
    let mut audits = Vec::with_capacity(done.len() * 2);
    for (e, a) in done {
        evaluated.push(e);
        audits.extend(a);
    }
    Ok((
        PaperEvaluation {
            paper_id: paper.paper_id.clone(),
            units: evaluated,
        },
        audits,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessMode {
    Combined,
    ValidityOnly,
    ActionOnly,
}

impl SuccessMode {
    pub const ALL: [SuccessMode; 3] = [
        SuccessMode::Combined,
        SuccessMode::ValidityOnly,
        SuccessMode::ActionOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SuccessMode::Combined => "combined",
            SuccessMode::ValidityOnly => "validity_only",
            SuccessMode::ActionOnly => "action_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessOptions {
    pub thresholds: QualityThresholds,
    /// Apply the quality filter in the single-label modes as well as in combined mode.
    pub filter_all_modes: bool,
}

impl Default for SuccessOptions {
    fn default() -> Self {
        SuccessOptions {
            thresholds: QualityThresholds::default(),
            filter_all_modes: true,
        }
    }
}

pub fn is_success(unit: &EvaluatedUnit, mode: SuccessMode, options: &SuccessOptions) -> bool {
    let filtered = mode == SuccessMode::Combined || options.filter_all_modes;
    if filtered && !passes_quality(&unit.quality, &options.thresholds) {
        return false;
    }
    let valid = unit.prediction.predicted_validity.is_valid();
    let acts = is_actionable(unit.prediction.predicted_action);
    match mode {
        SuccessMode::Combined => valid && acts,
        SuccessMode::ValidityOnly => valid,
        SuccessMode::ActionOnly => acts,
    }
}

/// Fraction of units that succeed; units failing the filter stay in the denominator.
pub fn success_rate<'a, I>(units: I, mode: SuccessMode, options: &SuccessOptions) -> Result<f64>
where
    I: IntoIterator<Item = &'a EvaluatedUnit>,
{
    let (mut n, mut hits) = (0usize, 0usize);
    for u in units {
        n += 1;
        hits += is_success(u, mode, options) as usize;
    }
    if n == 0 {
        return Err(Error::InvalidInput(
            "success rate of an empty unit set".into(),
        ));
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            k: 5,
            iterations: 1000,
            seed: 0,
        }
    }
}

/// Per-mode bootstrap summaries.
pub type SuccessBootstrap = BTreeMap<SuccessMode, CIReport>;

/// Draws `k` units per paper (all of them when a paper has fewer) in every iteration and
/// pools the sampled units of all papers into one rate per mode.
pub fn bootstrap_eval(
    papers: &[PaperEvaluation],
    cfg: &BootstrapConfig,
    options: &SuccessOptions,
    exec: Exec,
) -> Result<SuccessBootstrap> {
    if cfg.iterations < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 iterations, got {}",
            cfg.iterations
        )));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidInput(
            "subsample size k must be at least 1".into(),
        ));
    }
    let papers: Vec<&PaperEvaluation> = papers.iter().filter(|p| !p.units.is_empty()).collect();
    if papers.is_empty() {
        return Err(Error::InvalidInput("no evaluated units".into()));
    }
    let draws = exec
        .map_range(cfg.iterations, |b| -> Result<[f64; 3]> {
            let sample: Vec<&EvaluatedUnit> = papers
                .iter()
                .flat_map(|p| {
                    cyclic_subset(p.units.len(), cfg.k, cfg.seed, &p.paper_id, b)
                        .into_iter()
                        .map(|i| &p.units[i])
                })
                .collect();
            let mut out = [0.0; 3];
            for (slot, mode) in out.iter_mut().zip(SuccessMode::ALL) {
                *slot = success_rate(sample.iter().copied(), mode, options)?;
            }
            Ok(out)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    SuccessMode::ALL
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            Ok((*m, CIReport::from_draws(&col, cfg.seed)?))
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use serde_json::json;

    use super::*;
    use crate::domain::Source;
    use crate::judge::StubBackend;

    pub(crate) fn evaluated(
        id: &str,
        quality: u8,
        validity: Validity,
        action: AuthorAction,
    ) -> EvaluatedUnit {
        EvaluatedUnit {
            unit_id: id.into(),
            quality: QualityScores::uniform(quality),
            prediction: PredictedResponse {
                unit_id: id.into(),
                predicted_validity: validity,
                predicted_action: action,
                predicted_response_text: None,
            },
        }
    }

    fn paper() -> PaperRecord {
        crate::ingest::tests::paper("P1", 2024, crate::domain::Decision::Accepted)
    }

    #[test]
    fn threshold_checks() {
        let t = QualityThresholds::default();
        assert!(passes_quality(&QualityScores::uniform(5), &t));
        let mut s = QualityScores::uniform(5);
        s.paper_specific_grounding = 4;
        assert!(!passes_quality(&s, &t));
        assert!(passes_quality(
            &QualityScores::uniform(1),
            &QualityThresholds::uniform(1.0)
        ));
        assert!(QualityThresholds::uniform(6.0).validate().is_err());
    }

    #[test]
    fn one_in_five() {
        use AuthorAction::*;
        use Validity::*;
        let units = vec![
            evaluated("a", 5, Agreed, WillRevise),
            evaluated("b", 5, Rebutted, WillRevise),
            evaluated("c", 5, Agreed, PointToExistingContent),
            evaluated("d", 3, Agreed, WillRevise),
            evaluated("e", 5, Unclear, UnclearOrNoResponse),
        ];
        let o = SuccessOptions::default();
        assert_eq!(
            success_rate(&units, SuccessMode::Combined, &o).unwrap(),
            0.2
        );
        assert_eq!(
            success_rate(&units, SuccessMode::ValidityOnly, &o).unwrap(),
            0.4
        );
        assert_eq!(
            success_rate(&units, SuccessMode::ActionOnly, &o).unwrap(),
            0.4
        );
        let unfiltered = SuccessOptions {
            filter_all_modes: false,
            ..o
        };
        assert_eq!(
            success_rate(&units, SuccessMode::ValidityOnly, &unfiltered).unwrap(),
            0.6
        );
        assert_eq!(
            success_rate(&units, SuccessMode::Combined, &unfiltered).unwrap(),
            0.2
        );
    }

    #[test]
    fn failing_filter_zeroes_every_mode() {
        let units = vec![evaluated(
            "a",
            2,
            Validity::Agreed,
            AuthorAction::WillRevise,
        )];
        for m in SuccessMode::ALL {
            assert_eq!(
                success_rate(&units, m, &SuccessOptions::default()).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(success_rate(&[], SuccessMode::Combined, &SuccessOptions::default()).is_err());
    }

    #[test]
    fn stub_scoring_and_prediction() {
        let p = paper();
        let unit = FeedbackUnit::new("P1", None, Source::Model, "The method is fine.");
        let dims: serde_json::Map<String, serde_json::Value> = crate::judge::prompts::QUALITY_KEYS
            .iter()
            .map(|k| {
                let s = if *k == "paper_specific_grounding" {
                    2
                } else {
                    4
                };
                (
                    k.to_string(),
                    json!({"score": s, "justification": "generic"}),
                )
            })
            .collect();
        let stub = StubBackend::default()
            .with_response(names::QUALITY_SCORE, "*", json!({"scores": dims}))
            .with_response(
                names::PREDICT_RESPONSE,
                "*",
                json!({"validity": "agreed", "author_action": "will_revise", "author_response": "We will fix it."}),
            );
        let client = JudgeClient::stub(stub);
        let (q, _) = score_quality(
            &client,
            &EndpointConfig::preset("quality").unwrap(),
            &unit,
            &p,
        )
        .unwrap();
        assert_eq!(q.paper_specific_grounding, 2);
        let (q2, a2) = score_quality(
            &client,
            &EndpointConfig::preset("quality").unwrap(),
            &unit,
            &p,
        )
        .unwrap();
        assert_eq!(q, q2);
        assert!(a2.cache_hit);
        let (r, _) = predict_response(
            &client,
            &EndpointConfig::preset("predict").unwrap(),
            &unit,
            &p,
        )
        .unwrap();
        assert_eq!(r.predicted_validity, Validity::Agreed);
        assert_eq!(r.predicted_action, AuthorAction::WillRevise);
    }

    #[test]
    fn unknown_predicted_label() {
        let stub = StubBackend::default().with_response(
            names::PREDICT_RESPONSE,
            "*",
            json!({"validity": "maybe", "author_action": "will_revise"}),
        );
        let client = JudgeClient::stub(stub);
        let unit = FeedbackUnit::new("P1", None, Source::Model, "x");
        let err = predict_response(
            &client,
            &EndpointConfig::preset("predict").unwrap(),
            &unit,
            &paper(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::Label {
                field: "validity",
                ..
            }
        ));
    }

    #[test]
    fn small_papers_have_zero_width() {
        use AuthorAction::*;
        let papers = vec![PaperEvaluation {
            paper_id: "P".into(),
            units: vec![
                evaluated("a", 5, Validity::Agreed, WillRevise),
                evaluated("b", 5, Validity::Rebutted, WillRevise),
            ],
        }];
        let cfg = BootstrapConfig {
            k: 5,
            iterations: 50,
            seed: 3,
        };
        let r = bootstrap_eval(&papers, &cfg, &SuccessOptions::default(), Exec::default()).unwrap();
        let c = r[&SuccessMode::Combined];
        assert_eq!(c.point_estimate, 0.5);
        assert_eq!(c.half_width(), 0.0);
        let again =
            bootstrap_eval(&papers, &cfg, &SuccessOptions::default(), Exec::default()).unwrap();
        assert_eq!(r, again);
        let one = BootstrapConfig {
            iterations: 1,
            ..cfg
        };
        assert!(
            bootstrap_eval(&papers, &one, &SuccessOptions::default(), Exec::default()).is_err()
        );
    }
}

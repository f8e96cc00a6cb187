//! Domain types shared by every pipeline stage.
//!
//! All enums serialize as lowercase snake_case strings. [`success_indicator`] is the single
//! definition of a successful feedback unit used by training-data construction and by both
//! evaluation protocols.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Whether the authors accepted a critique as valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Agreed,
    Rebutted,
    Unclear,
}

impl Validity {
    pub const ALL: [Validity; 3] = [Validity::Agreed, Validity::Rebutted, Validity::Unclear];

    pub fn as_str(self) -> &'static str {
        match self {
            Validity::Agreed => "agreed",
            Validity::Rebutted => "rebutted",
            Validity::Unclear => "unclear",
        }
    }

    pub fn is_valid(self) -> bool {
        self == Validity::Agreed
    }
}

impl FromStr for Validity {
    type Err = Error;

    /// Accepts both the canonical names and the judge's `*_by_authors` spellings.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "agreed" | "agreed_by_authors" => Ok(Validity::Agreed),
            "rebutted" | "rebutted_by_authors" => Ok(Validity::Rebutted),
            "unclear" => Ok(Validity::Unclear),
            _ => Err(Error::Label {
                field: "validity",
                value: s.to_string(),
            }),
        }
    }
}

/// The author's committed response to a critique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorAction {
    WillRevise,
    DeferFutureWork,
    PointToExistingContent,
    NoRevisionAccept,
    NoRevisionContest,
    NoActionOther,
    UnclearOrNoResponse,
}

impl AuthorAction {
    pub const ALL: [AuthorAction; 7] = [
        AuthorAction::WillRevise,
        AuthorAction::DeferFutureWork,
        AuthorAction::PointToExistingContent,
        AuthorAction::NoRevisionAccept,
        AuthorAction::NoRevisionContest,
        AuthorAction::NoActionOther,
        AuthorAction::UnclearOrNoResponse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuthorAction::WillRevise => "will_revise",
            AuthorAction::DeferFutureWork => "defer_future_work",
            AuthorAction::PointToExistingContent => "point_to_existing_content",
            AuthorAction::NoRevisionAccept => "no_revision_accept",
            AuthorAction::NoRevisionContest => "no_revision_contest",
            AuthorAction::NoActionOther => "no_action_other",
            AuthorAction::UnclearOrNoResponse => "unclear_or_no_response",
        }
    }
}

impl FromStr for AuthorAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        AuthorAction::ALL
            .into_iter()
            .find(|a| a.as_str() == key)
            .ok_or_else(|| Error::Label {
                field: "author_action",
                value: s.to_string(),
            })
    }
}

/// Feed up (goal), feed back (gap) and feed forward (next step) components of a critique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackDimension {
    FeedUp,
    FeedBack,
    FeedForward,
}

impl FeedbackDimension {
    pub const ALL: [FeedbackDimension; 3] = [
        FeedbackDimension::FeedUp,
        FeedbackDimension::FeedBack,
        FeedbackDimension::FeedForward,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackDimension::FeedUp => "feed_up",
            FeedbackDimension::FeedBack => "feed_back",
            FeedbackDimension::FeedForward => "feed_forward",
        }
    }
}

/// Closed taxonomy of the review aspects a critique can emphasise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectTag {
    AddExperimentsMoreDatasets,
    AddAblations,
    AlgorithmEfficiency,
    TheoreticalSoundness,
    Implications,
    EthicalAspects,
    MissingCitations,
    Novelty,
    ClarityPresentation,
    ComparisonPreviousStudies,
    Reproducibility,
}

impl AspectTag {
    pub const ALL: [AspectTag; 11] = [
        AspectTag::AddExperimentsMoreDatasets,
        AspectTag::AddAblations,
        AspectTag::AlgorithmEfficiency,
        AspectTag::TheoreticalSoundness,
        AspectTag::Implications,
        AspectTag::EthicalAspects,
        AspectTag::MissingCitations,
        AspectTag::Novelty,
        AspectTag::ClarityPresentation,
        AspectTag::ComparisonPreviousStudies,
        AspectTag::Reproducibility,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AspectTag::AddExperimentsMoreDatasets => "add_experiments_more_datasets",
            AspectTag::AddAblations => "add_ablations",
            AspectTag::AlgorithmEfficiency => "algorithm_efficiency",
            AspectTag::TheoreticalSoundness => "theoretical_soundness",
            AspectTag::Implications => "implications",
            AspectTag::EthicalAspects => "ethical_aspects",
            AspectTag::MissingCitations => "missing_citations",
            AspectTag::Novelty => "novelty",
            AspectTag::ClarityPresentation => "clarity_presentation",
            AspectTag::ComparisonPreviousStudies => "comparison_previous_studies",
            AspectTag::Reproducibility => "reproducibility",
        }
    }

    /// Human-readable name as used in judge prompts and report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            AspectTag::AddExperimentsMoreDatasets => "Add Experiments on More Datasets",
            AspectTag::AddAblations => "Add Ablations Experiments",
            AspectTag::AlgorithmEfficiency => "Algorithm Efficiency",
            AspectTag::TheoreticalSoundness => "Theoretical Soundness",
            AspectTag::Implications => "Implications of the Research",
            AspectTag::EthicalAspects => "Ethical Aspects",
            AspectTag::MissingCitations => "Missing Citations",
            AspectTag::Novelty => "Novelty",
            AspectTag::ClarityPresentation => "Clarity and Presentation",
            AspectTag::ComparisonPreviousStudies => "Comparison to Previous Studies",
            AspectTag::Reproducibility => "Reproducibility",
        }
    }
}

fn slug(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.trim().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

impl FromStr for AspectTag {
    type Err = Error;

    /// Accepts snake_case names and display names; anything else is an error.
    fn from_str(s: &str) -> Result<Self> {
        let key = slug(s);
        AspectTag::ALL
            .into_iter()
            .find(|a| a.as_str() == key || slug(a.display_name()) == key)
            .ok_or_else(|| Error::Label {
                field: "aspect",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for AspectTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `true` for the two actionable classes: a committed revision or a deferral to future work.
pub fn is_actionable(action: AuthorAction) -> bool {
    matches!(
        action,
        AuthorAction::WillRevise | AuthorAction::DeferFutureWork
    )
}

/// A unit is successful iff the authors agreed it is valid and the response is actionable.
/// `Unclear` validity and `UnclearOrNoResponse` both force `false`.
pub fn success_indicator(validity: Validity, action: AuthorAction) -> bool {
    validity.is_valid() && is_actionable(action)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub String);

impl UnitId {
    /// Content-derived id: stable across re-runs for the same paper, reviewer and text
    /// (case and whitespace insensitive).
    pub fn derive(paper_id: &str, reviewer_id: Option<&str>, text: &str) -> Self {
        let normalized = text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        let mut h = Sha256::new();
        h.update(paper_id.as_bytes());
        h.update([0x1f]);
        h.update(reviewer_id.unwrap_or("").as_bytes());
        h.update([0x1f]);
        h.update(normalized.as_bytes());
        UnitId(format!("u_{}", &hex::encode(h.finalize())[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UnitId {
    fn from(s: &str) -> Self {
        UnitId(s.to_string())
    }
}

/// One self-contained critique, optionally paired with the author response and its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackUnit {
    pub id: UnitId,
    pub paper_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer_id: Option<String>,
    pub source: Source,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<Validity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<AuthorAction>,
    #[serde(default)]
    pub aspects: BTreeSet<AspectTag>,
    #[serde(default)]
    pub dimensions: BTreeSet<FeedbackDimension>,
}

impl FeedbackUnit {
    /// An unlabeled unit with a content-derived id.
    pub fn new(
        paper_id: impl Into<String>,
        reviewer_id: Option<String>,
        source: Source,
        text: impl Into<String>,
    ) -> Self {
        let paper_id = paper_id.into();
        let text = text.into();
        FeedbackUnit {
            id: UnitId::derive(&paper_id, reviewer_id.as_deref(), &text),
            paper_id,
            reviewer_id,
            source,
            text,
            author_response_text: None,
            validity: None,
            action: None,
            aspects: BTreeSet::new(),
            dimensions: BTreeSet::new(),
        }
    }

    pub fn with_labels(mut self, validity: Validity, action: AuthorAction) -> Self {
        self.validity = Some(validity);
        self.action = Some(action);
        self
    }

    pub fn is_labeled(&self) -> bool {
        self.validity.is_some() && self.action.is_some()
    }

    /// Success per [`success_indicator`]; unlabeled units are never successful.
    pub fn is_successful(&self) -> bool {
        match (self.validity, self.action) {
            (Some(v), Some(a)) => success_indicator(v, a),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "unit {} has empty text",
                self.id
            )));
        }
        if self.source == Source::Human && self.reviewer_id.is_none() {
            return Err(Error::InvalidInput(format!(
                "human unit {} has no reviewer_id",
                self.id
            )));
        }
        if self.validity.is_some() != self.action.is_some() {
            return Err(Error::InvalidInput(format!(
                "unit {} carries only one of validity/action",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Reviewer,
    Author,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// The discussion between one reviewer and the authors. Turns need not alternate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewThread {
    pub reviewer_id: String,
    pub turns: Vec<Turn>,
}

impl ReviewThread {
    /// Renders the conversation as `Speaker: text` blocks for judge prompts.
    pub fn conversation_text(&self) -> String {
        self.turns
            .iter()
            .map(|t| {
                let who = match t.speaker {
                    Speaker::Reviewer => format!("Reviewer {}", self.reviewer_id),
                    Speaker::Author => "Authors".to_string(),
                };
                format!("{who}: {}", t.text.trim())
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub body_markdown: String,
    pub venue_year: i32,
    pub decision: Decision,
    #[serde(default)]
    pub threads: Vec<ReviewThread>,
    #[serde(default)]
    pub units: Vec<FeedbackUnit>,
}

impl PaperRecord {
    pub fn validate(&self) -> Result<()> {
        if self.paper_id.trim().is_empty() {
            return Err(Error::InvalidInput("record with empty paper_id".into()));
        }
        for t in &self.threads {
            if t.turns.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "paper {}: thread of reviewer {} has no turns",
                    self.paper_id, t.reviewer_id
                )));
            }
        }
        for u in &self.units {
            u.validate()?;
            if u.paper_id != self.paper_id {
                return Err(Error::InvalidInput(format!(
                    "paper {}: unit {} belongs to paper {}",
                    self.paper_id, u.id, u.paper_id
                )));
            }
            if let Some(r) = &u.reviewer_id {
                if u.source == Source::Human && !self.threads.iter().any(|t| &t.reviewer_id == r) {
                    return Err(Error::InvalidInput(format!(
                        "paper {}: unit {} references unknown reviewer {r}",
                        self.paper_id, u.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn require_body(&self) -> Result<()> {
        if self.body_markdown.trim().is_empty() {
            return Err(Error::Precondition(format!(
                "paper {} has an empty markdown body",
                self.paper_id
            )));
        }
        Ok(())
    }

    pub fn thread(&self, reviewer_id: &str) -> Option<&ReviewThread> {
        self.threads.iter().find(|t| t.reviewer_id == reviewer_id)
    }
}

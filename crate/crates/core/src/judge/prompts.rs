//! Versioned prompt templates for every judge task.
//!
//! Placeholders are written `{name}`; a literal brace is written `{{` or `}}`. Bump a
//! template's version whenever its text or schema changes: the version is part of every
//! cache key, so stale cached responses are never reused.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::schema::{Field, Schema};
use crate::domain::{AspectTag, AuthorAction};
use crate::error::{Error, Result};

pub mod names {
    pub const PARSE_THREAD: &str = "parse_thread";
    pub const CORRUPT_FEEDBACK: &str = "corrupt_feedback";
    pub const VERIFY_CORRUPTION: &str = "verify_corruption";
    pub const QUALITY_SCORE: &str = "quality_score";
    pub const PREDICT_RESPONSE: &str = "predict_response";
    pub const MATCH_FEEDBACK: &str = "match_feedback";
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: String,
    pub version: u32,
    pub system_text: String,
    pub user_text: String,
    pub response_schema: Schema,
}

impl PromptTemplate {
    /// `name@vN`, recorded next to every artifact produced with this template.
    pub fn version_tag(&self) -> String {
        format!("{}@v{}", self.name, self.version)
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        for seg in tokenize(&self.user_text) {
            if let Segment::Placeholder(p) = seg {
                if !out.iter().any(|o: &String| o == p) {
                    out.push(p.to_string());
                }
            }
        }
        out
    }

    /// Substitutes every placeholder. Unbound placeholders are an error; extra bindings are
    /// ignored.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String> {
        let mut out = String::with_capacity(self.user_text.len());
        for seg in tokenize(&self.user_text) {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Brace(c) => out.push(c),
                Segment::Placeholder(p) => match bindings.get(p) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(Error::Precondition(format!(
                            "template `{}` placeholder `{p}` is unbound",
                            self.name
                        )))
                    }
                },
            }
        }
        Ok(out)
    }
}

enum Segment<'a> {
    Text(&'a str),
    Brace(char),
    Placeholder(&'a str),
}

fn tokenize(s: &str) -> Vec<Segment<'_>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if (c == b'{' || c == b'}') && bytes.get(i + 1) == Some(&c) {
            out.push(Segment::Text(&s[start..i]));
            out.push(Segment::Brace(c as char));
            i += 2;
            start = i;
            continue;
        }
        if c == b'{' {
            if let Some(len) = s[i + 1..].find('}') {
                let name = &s[i + 1..i + 1 + len];
                if !name.is_empty()
                    && name
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
                {
                    out.push(Segment::Text(&s[start..i]));
                    out.push(Segment::Placeholder(name));
                    i += len + 2;
                    start = i;
                    continue;
                }
            }
        }
        i += 1;
    }
    out.push(Segment::Text(&s[start..]));
    out
}

/// Name → template lookup. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: BTreeMap<String, Arc<PromptTemplate>>,
}

impl PromptRegistry {
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for t in [
            parse_thread(),
            corrupt_feedback(),
            verify_corruption(),
            quality_score(),
            predict_response(),
            match_feedback(),
        ] {
            templates.insert(t.name.clone(), Arc::new(t));
        }
        PromptRegistry { templates }
    }

    pub fn get(&self, name: &str) -> Result<Arc<PromptTemplate>> {
        self.templates
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no prompt template named `{name}`")))
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates
            .insert(template.name.clone(), Arc::new(template));
    }

    /// `name → version` for run metadata.
    pub fn versions(&self) -> BTreeMap<String, u32> {
        self.templates
            .iter()
            .map(|(k, v)| (k.clone(), v.version))
            .collect()
    }
}

impl Default for PromptRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

pub const CORRUPTION_KEYS: [&str; 5] = [
    "generic",
    "vague",
    "inaccurate",
    "nonessential",
    "unsupportive",
];

pub const QUALITY_KEYS: [&str; 5] = [
    "accuracy",
    "prioritisation",
    "constructive_tone",
    "paper_specific_grounding",
    "actionability",
];

fn parse_thread() -> PromptTemplate {
    let unit = Schema::Object(vec![
        Field::required("feedback_text", Schema::String),
        Field::optional("author_response_text", Schema::nullable(Schema::String)),
        Field::required("validity", Schema::String),
        Field::required("author_action", Schema::String),
        Field::optional(
            "dimensions",
            Schema::Object(vec![
                Field::optional("feed_up", Schema::nullable(Schema::String)),
                Field::optional("feed_back", Schema::nullable(Schema::String)),
                Field::optional("feed_forward", Schema::nullable(Schema::String)),
            ]),
        ),
        Field::optional("aspects", Schema::array(Schema::String)),
    ]);
    let actions: Vec<&str> = AuthorAction::ALL.iter().map(|a| a.as_str()).collect();
    let aspects: Vec<&str> = AspectTag::ALL.iter().map(|a| a.display_name()).collect();
    PromptTemplate {
        name: names::PARSE_THREAD.into(),
        version: 1,
        system_text: "You analyse academic peer-review discussions and extract the \
                      critiques reviewers raise together with how the authors answered them."
            .into(),
        user_text: format!(
            "Below is the discussion between one reviewer and the authors of a paper.\n\
             Split the reviewer's comments into standalone feedback units, one per critique, \
             question or suggestion. Skip comments that are only praise and count them in \
             `skipped_positive`.\n\n\
             For each unit report:\n\
             - feedback_text: the critique rewritten so it can be read on its own, staying close \
             to the reviewer's wording.\n\
             - author_response_text: the authors' answer to this critique, rewritten to stand \
             alone in the authors' voice, or null when they did not answer.\n\
             - validity: one of agreed_by_authors, rebutted_by_authors, unclear.\n\
             - author_action: one of {actions}.\n\
             - dimensions: the goal (feed_up), gap (feed_back) and next step (feed_forward) \
             stated in the critique, each null when absent.\n\
             - aspects: zero or more of: {aspects}.\n\n\
             Respond with JSON only.\n\n\
             Discussion:\n{{conversation_text}}",
            actions = actions.join(", "),
            aspects = aspects.join("; "),
        ),
        response_schema: Schema::Object(vec![
            Field::required("units", Schema::array(unit)),
            Field::optional("skipped_positive", Schema::int_range(0, i64::MAX)),
        ]),
    }
}

fn corrupt_feedback() -> PromptTemplate {
    PromptTemplate {
        name: names::CORRUPT_FEEDBACK.into(),
        version: 1,
        system_text: "You rewrite reviewer feedback so that exactly one quality dimension \
                      gets worse while every other dimension stays as it was."
            .into(),
        user_text:
            "Paper title: {title}\n\nAbstract: {abstract}\n\nOriginal feedback: {feedback}\n\n\
                    Write five rewrites of the feedback, each degrading one dimension only:\n\
                    - generic: drop every detail specific to this paper so it could apply to any \
                    paper in the field.\n\
                    - vague: keep the references to the paper but drop concrete questions, \
                    examples and guidance.\n\
                    - inaccurate: add claims about the paper's content, method or results that \
                    sound plausible but are wrong.\n\
                    - nonessential: move the focus from the central fixable problem to minor, \
                    peripheral or stylistic points.\n\
                    - unsupportive: make the wording blunt, dismissive or commanding instead of \
                    constructive.\n\n\
                    Respond with a JSON object whose keys are generic, vague, inaccurate, \
                    nonessential and unsupportive, each holding the complete rewritten feedback."
                .into(),
        response_schema: Schema::Object(
            CORRUPTION_KEYS
                .iter()
                .map(|k| Field::required(k, Schema::String))
                .collect(),
        ),
    }
}

fn verify_corruption() -> PromptTemplate {
    let entry = Schema::Object(vec![
        Field::required("rewrite_index", Schema::int_range(0, i64::MAX)),
        Field::required("predicted_dimension", Schema::String),
        Field::required("target_degradation_score", Schema::int_range(1, 3)),
        Field::required("collateral_preservation_score", Schema::int_range(1, 3)),
        Field::optional("reasoning", Schema::String),
    ]);
    PromptTemplate {
        name: names::VERIFY_CORRUPTION.into(),
        version: 1,
        system_text: "You audit rewritten peer-review feedback: for each rewrite you name the \
                      quality dimension that was degraded and grade the rewrite."
            .into(),
        user_text:
            "Paper title: {title}\n\nAbstract: {abstract}\n\nOriginal feedback: {feedback}\n\n\
                    Rewrites (the degraded dimension of each is not given):\n{rewrites}\n\n\
                    For each rewrite give:\n\
                    - predicted_dimension: one of generic, vague, inaccurate, nonessential, \
                    unsupportive.\n\
                    - target_degradation_score: 1 to 3, where 3 means the dimension is clearly \
                    degraded and 1 barely.\n\
                    - collateral_preservation_score: 1 to 3, where 3 means every other dimension \
                    is intact and 1 means several changed.\n\
                    - reasoning: one or two sentences.\n\n\
                    Respond with a JSON object holding a `results` array ordered by rewrite_index."
                .into(),
        response_schema: Schema::Object(vec![Field::required("results", Schema::array(entry))]),
    }
}

fn quality_score() -> PromptTemplate {
    let dim = Schema::Object(vec![
        Field::required("score", Schema::int_range(1, 5)),
        Field::optional("justification", Schema::String),
    ]);
    PromptTemplate {
        name: names::QUALITY_SCORE.into(),
        version: 1,
        system_text: "You are a meta-reviewer grading peer-review feedback. Be impartial and \
                      back every score with phrases quoted from the feedback."
            .into(),
        user_text: "Venue: {venue}\n\nPaper excerpt:\n{paper_excerpt}\n\nFeedback:\n{feedback}\n\n\
                    Score the feedback from 1 to 5 on each dimension:\n\
                    - accuracy: statements about the paper's content, methods and results are \
                    correct.\n\
                    - prioritisation: it targets consequential scientific issues such as \
                    validity, novelty or reproducibility rather than cosmetic ones.\n\
                    - constructive_tone: it is collegial, respectful and aimed at improvement.\n\
                    - paper_specific_grounding: it refers to named components, results and claims \
                    of this paper rather than boilerplate.\n\
                    - actionability: the requested revisions are specific, feasible and tied to \
                    concrete sections or analyses.\n\n\
                    Respond with a JSON object {{\"scores\": {{<dimension>: {{\"score\": <1-5>, \
                    \"justification\": <text>}}}}}}."
            .into(),
        response_schema: Schema::Object(vec![Field::required(
            "scores",
            Schema::Object(
                QUALITY_KEYS
                    .iter()
                    .map(|k| Field::required(k, dim.clone()))
                    .collect(),
            ),
        )]),
    }
}

fn predict_response() -> PromptTemplate {
    PromptTemplate {
        name: names::PREDICT_RESPONSE.into(),
        version: 1,
        system_text: "You predict how the authors of a paper would answer a piece of reviewer \
                      feedback."
            .into(),
        user_text: "Paper:\n{paper_excerpt}\n\nFeedback:\n{feedback}\n\n\
                    Predict whether the authors agree the feedback is valid (validity) and what \
                    they would do about it (author_action), and write their likely response.\n\
                    Respond with a JSON object with keys validity, author_action and \
                    author_response."
            .into(),
        response_schema: Schema::Object(vec![
            Field::required("validity", Schema::String),
            Field::required("author_action", Schema::String),
            Field::optional("author_response", Schema::nullable(Schema::String)),
        ]),
    }
}

fn match_feedback() -> PromptTemplate {
    let verdict = Schema::Object(vec![
        Field::required(
            "match",
            Schema::AnyOf(vec![
                Schema::enumeration(&["0", "1"]),
                Schema::int_range(0, 1),
                Schema::Bool,
            ]),
        ),
        Field::optional("explanation", Schema::String),
    ]);
    PromptTemplate {
        name: names::MATCH_FEEDBACK.into(),
        version: 1,
        system_text: "You compare two pieces of feedback about the same paper.".into(),
        user_text: "Decide whether the two feedback items below match.\n\n\
                    They match when they share at least one concrete point that agrees on all of: \
                    the part of the paper targeted, the deficiency identified, the quality \
                    dimension concerned, and the action requested.\n\n\
                    They do not match when they only touch the same section or topic while \
                    raising different issues, when one praises and the other criticises, or when \
                    the wording overlaps but the substance or requested change differs.\n\n\
                    Paper abstract: {abstract}\n\nFeedback 1: {feedback1}\n\nFeedback 2: {feedback2}\n\n\
                    Respond with a JSON object {{\"match\": \"1\" or \"0\", \"explanation\": \
                    <short justification naming the overlap or its absence>}}."
            .into(),
        response_schema: Schema::AnyOf(vec![
            verdict.clone(),
            Schema::Array {
                items: Box::new(verdict),
                min_items: 1,
            },
        ]),
    }
}

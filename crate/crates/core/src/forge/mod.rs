//! Training-data construction: corruption variants, deduplication, SFT examples and DPO
//! preference pairs, each emitted with a [`TrainingManifest`] for external trainers.
//!
//! SFT JSONL, one example per line:
//!
//! ```text
//! {"messages": [{"role": "system", ...}, {"role": "user", ...}, {"role": "assistant", ...}],
//!  "metadata": {"paper_id": ..., "reviewer_id": ..., "unit_ids": [...]}}
//! ```
//!
//! DPO JSONL, one pair per line:
//!
//! ```text
//! {"prompt": [...messages...], "chosen": "...", "rejected": "...", "metadata": {...}}
//! ```

mod corruption;
mod dedup;
mod dpo;
mod sft;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use corruption::{
    apply_filter, corrupt, filter_stats, verify_and_filter, CorruptionDimension, CorruptionVariant,
    DimensionStats, Verification, VerifyOutcome,
};
pub use dedup::{dedup_indices, dedup_units};
pub use dpo::{
    build_dpo, build_dpo_pairs, CorruptionBank, DpoConfig, DpoOutput, PairKind, PreferencePair,
};
pub use sft::{build_sft, sft_examples, SftExample};

use crate::domain::PaperRecord;
use crate::error::{Error, Result};

pub const GENERATION_PROMPT_VERSION: &str = "generation@v1";

const GENERATION_SYSTEM: &str = "You are an experienced reviewer for a machine learning venue. \
    You write feedback that the authors can act on.";

/// Chat messages asking for feedback on `paper`.
pub fn generation_prompt(paper: &PaperRecord) -> Vec<Message> {
    vec![
        Message::new("system", GENERATION_SYSTEM),
        Message::new(
            "user",
            format!(
                "Read the paper below and list the points the authors should address. Each \
                 point should be specific to this paper, correct, and something the authors can \
                 fix.\n\n# {}\n\n{}",
                paper.title.trim(),
                paper.body_markdown.trim()
            ),
        ),
    ]
}

/// Numbered feedback list used as a training target.
pub fn render_feedback_list<S: AsRef<str>>(texts: &[S]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t.as_ref().trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Message {
            role: role.into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestKind {
    Sft,
    Dpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub kind: ManifestKind,
    pub dataset_path: PathBuf,
    pub record_count: usize,
    pub hyperparameters: BTreeMap<String, Value>,
    pub prompt_version: String,
}

impl TrainingManifest {
    /// Checks `record_count` against the dataset file's line count.
    pub fn verify(&self) -> Result<()> {
        let text = std::fs::read_to_string(&self.dataset_path)
            .map_err(|e| Error::io(&self.dataset_path, e))?;
        let lines = text.lines().filter(|l| !l.trim().is_empty()).count();
        if lines != self.record_count {
            return Err(Error::InvalidInput(format!(
                "manifest says {} records but {} has {lines}",
                self.record_count,
                self.dataset_path.display()
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        crate::ingest::write_atomic(path.as_ref(), text.as_bytes())
    }
}

fn shared_hyperparameters() -> BTreeMap<String, Value> {
    let mut h = BTreeMap::new();
    h.insert("max_sequence_length".into(), json!(30000));
    h.insert("train_batch_size".into(), json!(128));
    h.insert("learning_rate".into(), json!(5e-6));
    h.insert("epochs".into(), json!(1));
    h.insert("precision".into(), json!("bf16"));
    h
}

/// Default SFT trainer settings.
pub fn sft_hyperparameters() -> BTreeMap<String, Value> {
    let mut h = shared_hyperparameters();
    h.insert("base_model".into(), json!("Qwen3-8B"));
    h.insert("micro_batch_size".into(), json!(8));
    h
}

/// Default DPO trainer settings; the base model is the SFT checkpoint.
pub fn dpo_hyperparameters() -> BTreeMap<String, Value> {
    let mut h = shared_hyperparameters();
    h.insert("base_model".into(), json!("sft-checkpoint"));
    h.insert("micro_batch_size".into(), json!(4));
    h.insert("beta".into(), json!(0.1));
    h.insert("nll_loss_coefficient".into(), json!(0.2));
    h.insert("early_stop_step".into(), json!(50));
    h
}

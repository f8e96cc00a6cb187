use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    dedup_units, dpo_hyperparameters, generation_prompt, render_feedback_list, CorruptionDimension,
    CorruptionVariant, ManifestKind, Message, TrainingManifest, GENERATION_PROMPT_VERSION,
};
use crate::domain::{FeedbackUnit, PaperRecord, Source, UnitId};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ingest::{write_jsonl, DatasetStore};
use crate::judge::{EndpointConfig, JudgeClient, TextVectors};
use crate::stats::keyed_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    RealLabel,
    Corruption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub paper_id: String,
    pub pair_kind: PairKind,
    pub chosen: Vec<String>,
    pub rejected: Vec<String>,
    pub chosen_success_count: usize,
    pub rejected_success_count: usize,
    pub chosen_ids: Vec<String>,
    /// Corrupted items appear as `<unit_id>#<dimension>`.
    pub rejected_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrupted_dimension: Option<CorruptionDimension>,
}

impl PreferencePair {
    pub fn success_delta(&self) -> isize {
        self.chosen_success_count as isize - self.rejected_success_count as isize
    }
}

/// Kept corruption variants by source unit.
pub type CorruptionBank = BTreeMap<UnitId, Vec<CorruptionVariant>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub set_size: usize,
    pub min_delta: usize,
    pub real_pairs_per_paper: usize,
    /// Restrict chosen sets to successful units instead of merely more of them.
    pub chosen_successful_only: bool,
    pub dedup_threshold: f64,
    pub max_corruption_pairs_per_paper: Option<usize>,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            set_size: 5,
            min_delta: 2,
            real_pairs_per_paper: 1,
            chosen_successful_only: false,
            dedup_threshold: 0.5,
            max_corruption_pairs_per_paper: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipNote {
    pub paper_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoOutput {
    pub pairs: Vec<PreferencePair>,
    pub skipped: Vec<SkipNote>,
}

fn pick<'a, R: Rng>(pool: &[&'a FeedbackUnit], n: usize, rng: &mut R) -> Vec<&'a FeedbackUnit> {
    let mut idx = sample(rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i]).collect()
}

/// Feasible (chosen, rejected) success counts meeting the delta, largest delta first.
fn count_plans(s: usize, f: usize, cfg: &DpoConfig) -> Vec<(usize, usize, usize)> {
    let k = cfg.set_size.min(s + f);
    let lo = k.saturating_sub(f);
    let hi = k.min(s);
    let mut plans = Vec::new();
    if cfg.chosen_successful_only {
        let cs = cfg.set_size.min(s);
        for rs in lo..=hi {
            if cs >= rs + cfg.min_delta {
                plans.push((cs, rs, k));
            }
        }
    } else {
        for cs in lo..=hi {
            for rs in lo..=hi {
                if cs >= rs + cfg.min_delta {
                    plans.push((cs, rs, k));
                }
            }
        }
    }
    plans.sort_by_key(|&(cs, rs, _)| (std::cmp::Reverse(cs - rs), std::cmp::Reverse(cs)));
    plans
}

fn ordered<'a>(
    set: Vec<&'a FeedbackUnit>,
    position: &BTreeMap<&UnitId, usize>,
) -> Vec<&'a FeedbackUnit> {
    let mut set = set;
    set.sort_by_key(|u| position[&u.id]);
    set
}

fn real_label_pairs(
    paper_id: &str,
    units: &[FeedbackUnit],
    cfg: &DpoConfig,
) -> Vec<PreferencePair> {
    let position: BTreeMap<&UnitId, usize> =
        units.iter().enumerate().map(|(i, u)| (&u.id, i)).collect();
    let good: Vec<&FeedbackUnit> = units.iter().filter(|u| u.is_successful()).collect();
    let bad: Vec<&FeedbackUnit> = units.iter().filter(|u| !u.is_successful()).collect();
    let plans = count_plans(good.len(), bad.len(), cfg);
    if plans.is_empty() {
        return Vec::new();
    }
    (0..cfg.real_pairs_per_paper)
        .map(|j| {
            let (cs, rs, k) = plans[j % plans.len()];
            let mut rng = keyed_rng(cfg.seed, &format!("real|{paper_id}|{j}"));
            let mut chosen = pick(&good, cs, &mut rng);
            if !cfg.chosen_successful_only {
                chosen.extend(pick(&bad, k - cs, &mut rng));
            }
            let mut rejected = pick(&good, rs, &mut rng);
            rejected.extend(pick(&bad, k - rs, &mut rng));
            let chosen = ordered(chosen, &position);
            let rejected = ordered(rejected, &position);
            PreferencePair {
                paper_id: paper_id.to_string(),
                pair_kind: PairKind::RealLabel,
                chosen: chosen.iter().map(|u| u.text.clone()).collect(),
                rejected: rejected.iter().map(|u| u.text.clone()).collect(),
                chosen_success_count: cs,
                rejected_success_count: rs,
                chosen_ids: chosen.iter().map(|u| u.id.0.clone()).collect(),
                rejected_ids: rejected.iter().map(|u| u.id.0.clone()).collect(),
                corrupted_dimension: None,
            }
        })
        .collect()
}

fn corruption_pairs(
    paper_id: &str,
    units: &[FeedbackUnit],
    bank: &CorruptionBank,
    vectors: &TextVectors,
    cfg: &DpoConfig,
    notes: &mut Vec<String>,
) -> Result<Vec<PreferencePair>> {
    let position: BTreeMap<&UnitId, usize> =
        units.iter().enumerate().map(|(i, u)| (&u.id, i)).collect();
    let mut out = Vec::new();
    for target in units.iter().filter(|u| u.is_successful()) {
        let Some(variants) = bank.get(&target.id) else {
            continue;
        };
        let others: Vec<&FeedbackUnit> = units.iter().filter(|u| u.id != target.id).collect();
        let mut rng = keyed_rng(cfg.seed, &format!("corruption|{paper_id}|{}", target.id));
        let mut set = pick(
            &others,
            (cfg.set_size.max(1) - 1).min(others.len()),
            &mut rng,
        );
        set.push(target);
        let set = ordered(set, &position);
        let successes = set.iter().filter(|u| u.is_successful()).count();
        for v in variants.iter().filter(|v| v.is_kept()) {
            if cfg
                .max_corruption_pairs_per_paper
                .is_some_and(|m| out.len() >= m)
            {
                return Ok(out);
            }
            let mut clash = None;
            for u in set.iter().filter(|u| u.id != target.id) {
                if vectors.cosine(&v.text, &u.text)? > cfg.dedup_threshold {
                    clash = Some(u.id.clone());
                    break;
                }
            }
            if let Some(other) = clash {
                notes.push(format!(
                    "{}#{} skipped: too similar to {other}",
                    target.id, v.dimension
                ));
                continue;
            }
            let swap = |u: &&FeedbackUnit| {
                if u.id == target.id {
                    (v.text.clone(), format!("{}#{}", u.id, v.dimension))
                } else {
                    (u.text.clone(), u.id.0.clone())
                }
            };
            let (rejected, rejected_ids): (Vec<String>, Vec<String>) = set.iter().map(swap).unzip();
            out.push(PreferencePair {
                paper_id: paper_id.to_string(),
                pair_kind: PairKind::Corruption,
                chosen: set.iter().map(|u| u.text.clone()).collect(),
                rejected,
                chosen_success_count: successes,
                rejected_success_count: successes - 1,
                chosen_ids: set.iter().map(|u| u.id.0.clone()).collect(),
                rejected_ids,
                corrupted_dimension: Some(v.dimension),
            });
        }
    }
    Ok(out)
}

/// Preference pairs for each paper from its deduplicated human units.
///
/// `vectors` must cover every unit text and every kept variant text. Papers yielding no
/// pair are listed in `skipped`.
pub fn build_dpo_pairs(
    papers: &[PaperRecord],
    bank: &CorruptionBank,
    vectors: &TextVectors,
    cfg: &DpoConfig,
    exec: Exec,
) -> Result<DpoOutput> {
    if cfg.set_size == 0 || cfg.min_delta == 0 {
        return Err(Error::Config(
            "dpo set_size and min_delta must be positive".into(),
        ));
    }
    let mut sorted: Vec<&PaperRecord> = papers.iter().collect();
    sorted.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
    let per_paper = exec.try_map(
        &sorted,
        |paper| -> Result<(Vec<PreferencePair>, Option<SkipNote>)> {
            let labeled: Vec<FeedbackUnit> = paper
                .units
                .iter()
                .filter(|u| u.source == Source::Human && u.is_labeled())
                .cloned()
                .collect();
            let units = dedup_units(
                &labeled,
                vectors,
                cfg.dedup_threshold,
                cfg.seed,
                &paper.paper_id,
            )?;
            let mut notes = Vec::new();
            let mut pairs = real_label_pairs(&paper.paper_id, &units, cfg);
            if pairs.is_empty() {
                notes.push(format!(
                    "no real_label pair reaches success delta {}",
                    cfg.min_delta
                ));
            }
            pairs.extend(corruption_pairs(
                &paper.paper_id,
                &units,
                bank,
                vectors,
                cfg,
                &mut notes,
            )?);
            let skip = (pairs.is_empty() || !notes.is_empty()).then(|| SkipNote {
                paper_id: paper.paper_id.clone(),
                reason: notes.join("; "),
            });
            Ok((pairs, skip))
        },
    )?;
    let mut out = DpoOutput::default();
    for (pairs, skip) in per_paper {
        out.pairs.extend(pairs);
        out.skipped.extend(skip.filter(|s| !s.reason.is_empty()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub prompt: Vec<Message>,
    pub chosen: String,
    pub rejected: String,
    pub metadata: PreferencePair,
}

/// Embeds, deduplicates and pairs the units of `split`, writing `dpo_<split>.jsonl` and
/// `dpo_<split>.manifest.json` under `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn build_dpo(
    client: &JudgeClient,
    embed_endpoint: &EndpointConfig,
    store: &DatasetStore,
    split: &str,
    bank: &CorruptionBank,
    cfg: &DpoConfig,
    out_dir: impl AsRef<Path>,
    exec: Exec,
) -> Result<(TrainingManifest, DpoOutput)> {
    let papers = store.split(split)?;
    let texts = papers
        .iter()
        .flat_map(|p| p.units.iter().map(|u| u.text.as_str()))
        .chain(bank.values().flatten().map(|v| v.text.as_str()));
    let vectors = client.embed_table(embed_endpoint, texts)?;
    let output = build_dpo_pairs(papers, bank, &vectors, cfg, exec)?;
    if output.pairs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "split `{split}` yields no preference pair"
        )));
    }
    let by_id: BTreeMap<&str, &PaperRecord> =
        papers.iter().map(|p| (p.paper_id.as_str(), p)).collect();
    let records: Vec<DpoRecord> = output
        .pairs
        .iter()
        .map(|pair| DpoRecord {
            prompt: generation_prompt(by_id[pair.paper_id.as_str()]),
            chosen: render_feedback_list(&pair.chosen),
            rejected: render_feedback_list(&pair.rejected),
            metadata: pair.clone(),
        })
        .collect();
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dataset_path = out_dir.join(format!("dpo_{split}.jsonl"));
    write_jsonl(&dataset_path, &records)?;
    let manifest = TrainingManifest {
        kind: ManifestKind::Dpo,
        dataset_path,
        record_count: records.len(),
        hyperparameters: dpo_hyperparameters(),
        prompt_version: GENERATION_PROMPT_VERSION.into(),
    };
    manifest.write(out_dir.join(format!("dpo_{split}.manifest.json")))?;
    Ok((manifest, output))
}

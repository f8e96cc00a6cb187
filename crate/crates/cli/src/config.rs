//! Declarative pipeline configuration.
//!
//! A single JSON file, every field optional. Relative paths resolve against the config
//! file's directory. `--set a.b=value` overrides any field; the value is parsed as JSON
//! and falls back to a plain string.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use fbeval_core::consensus::{Aggregation, Granularity};
use fbeval_core::ingest::{PoolSpec, TestSplitConfig};
use fbeval_core::judge::{content_key, EndpointConfig};
use fbeval_core::successeval::QualityThresholds;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Judge tasks, in the order they are validated.
pub const TASKS: [&str; 7] = [
    "parse", "corrupt", "verify", "quality", "predict", "match", "embed",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Stub,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub dedup: f64,
    pub human_human: f64,
    pub human_model: f64,
    pub match_rate_cutoff: f64,
    pub min_delta: usize,
    pub quality: QualityThresholds,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            dedup: 0.5,
            human_human: 0.55,
            human_model: 0.45,
            match_rate_cutoff: 0.1,
            min_delta: 2,
            quality: QualityThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            k: 5,
            iterations: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Parent of all run directories.
    pub run_root: Option<PathBuf>,
    /// Exported review-platform notes (ingest input).
    pub openreview: Option<PathBuf>,
    /// Paper records as JSONL (alternative ingest input).
    pub papers: Option<PathBuf>,
    /// Existing dataset store; defaults to the run's parsed store.
    pub dataset: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub model_feedback: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub stub_fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub dev_size: usize,
    pub pools: Vec<PoolSpec>,
    /// Split that forge commands read.
    pub train_split: String,
    /// Split that evaluation commands read.
    pub eval_split: String,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            dev_size: 0,
            pools: TestSplitConfig::default().pools,
            train_split: "train".into(),
            eval_split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoSettings {
    pub set_size: usize,
    pub real_pairs_per_paper: usize,
    pub chosen_successful_only: bool,
    pub max_corruption_pairs_per_paper: Option<usize>,
}

impl Default for DpoSettings {
    fn default() -> Self {
        DpoSettings {
            set_size: 5,
            real_pairs_per_paper: 1,
            chosen_successful_only: false,
            max_corruption_pairs_per_paper: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusSettings {
    pub granularity: Granularity,
    pub aggregation: Aggregation,
    pub partner_must_succeed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessSettings {
    pub filter_all_modes: bool,
}

impl Default for SuccessSettings {
    fn default() -> Self {
        SuccessSettings {
            filter_all_modes: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    /// System the aligned/novel changes are measured against.
    pub baseline_system: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Task name to endpoint. In stub mode unbound tasks use the preset.
    pub endpoints: BTreeMap<String, EndpointConfig>,
    pub thresholds: Thresholds,
    pub sampling: Sampling,
    pub paths: Paths,
    pub split: SplitSettings,
    pub dpo: DpoSettings,
    pub consensus: ConsensusSettings,
    pub success: SuccessSettings,
    pub report: ReportSettings,
    /// Data-parallel execution; does not affect results.
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Stub,
            endpoints: BTreeMap::new(),
            thresholds: Thresholds::default(),
            sampling: Sampling::default(),
            paths: Paths::default(),
            split: SplitSettings::default(),
            dpo: DpoSettings::default(),
            consensus: ConsensusSettings::default(),
            success: SuccessSettings::default(),
            report: ReportSettings::default(),
            parallel: true,
        }
    }
}

/// A loaded configuration with the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    /// Reads `path` (or defaults when `None`) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (mut value, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(vec![format!("cannot read {}: {e}", p.display())])
                })?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(vec![format!("{}: {e}", p.display())]))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (v, dir)
            }
            None => (Value::Object(Default::default()), PathBuf::from(".")),
        };
        let mut problems = Vec::new();
        for o in overrides {
            if let Err(e) = apply_override(&mut value, o) {
                problems.push(e);
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        let config: PipelineConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(vec![format!("config: {e}")]))?;
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            normalize(&self.base_dir.join(p))
        }
    }

    pub fn run_root(&self) -> PathBuf {
        self.resolve(
            self.config
                .paths
                .run_root
                .as_deref()
                .unwrap_or(Path::new("runs")),
        )
    }

    /// Endpoint for `task`: the configured one, else the preset in stub mode.
    pub fn endpoint(&self, task: &str) -> Option<EndpointConfig> {
        match (self.config.endpoints.get(task), self.config.mode) {
            (Some(e), _) => Some(e.clone()),
            (None, Mode::Stub) => EndpointConfig::preset(task),
            (None, Mode::Live) => None,
        }
    }

    /// Every problem with the configuration for running a command needing `tasks` and
    /// `paths`, reported together.
    pub fn validate(
        &self,
        tasks: &[&str],
        paths: &[(&str, Option<&PathBuf>)],
    ) -> Result<(), CliError> {
        let c = &self.config;
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        let t = &c.thresholds;
        for (name, v) in [
            ("dedup", t.dedup),
            ("human_human", t.human_human),
            ("human_model", t.human_model),
        ] {
            check(
                (-1.0..=1.0).contains(&v),
                format!("thresholds.{name} = {v} outside [-1, 1]"),
            );
        }
        check(
            (0.0..=1.0).contains(&t.match_rate_cutoff),
            format!(
                "thresholds.match_rate_cutoff = {} outside [0, 1]",
                t.match_rate_cutoff
            ),
        );
        check(
            t.min_delta >= 1,
            "thresholds.min_delta must be at least 1".into(),
        );
        if let Err(e) = t.quality.validate() {
            check(false, format!("thresholds.quality: {e}"));
        }
        check(c.sampling.k >= 1, "sampling.k must be at least 1".into());
        check(
            c.sampling.iterations >= 2,
            format!(
                "sampling.iterations must be at least 2, got {}",
                c.sampling.iterations
            ),
        );
        check(
            c.dpo.set_size >= 1,
            "dpo.set_size must be at least 1".into(),
        );
        for name in c.endpoints.keys() {
            check(
                TASKS.contains(&name.as_str()),
                format!("endpoints.{name}: unknown judge task"),
            );
        }
        for (name, e) in &c.endpoints {
            if let Err(err) = e.validate() {
                check(false, format!("endpoints.{name}: {err}"));
            }
        }
        for task in tasks {
            match self.endpoint(task) {
                None => check(
                    false,
                    format!("judge task `{task}` has no endpoint bound in live mode"),
                ),
                Some(e) if c.mode == Mode::Live && std::env::var_os(&e.api_key_env).is_none() => {
                    check(
                        false,
                        format!(
                            "judge task `{task}`: environment variable {} is not set",
                            e.api_key_env
                        ),
                    )
                }
                _ => {}
            }
        }
        let set = [
            ("openreview", &c.paths.openreview),
            ("papers", &c.paths.papers),
            ("dataset", &c.paths.dataset),
            ("annotations", &c.paths.annotations),
            ("model_feedback", &c.paths.model_feedback),
            ("calibration", &c.paths.calibration),
            ("stub_fixtures", &c.paths.stub_fixtures),
        ];
        for (name, p) in set {
            if let Some(p) = p {
                check(
                    self.resolve(p).exists(),
                    format!("paths.{name}: {} does not exist", p.display()),
                );
            }
        }
        for (name, p) in paths {
            if p.is_none() {
                check(false, format!("paths.{name} is required for this command"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }

    /// Hash of every result-affecting field, with input paths lexically normalized.
    /// `parallel` and `paths.run_root` are left out.
    pub fn hash(&self) -> String {
        let mut c = self.config.clone();
        c.parallel = true;
        let p = &mut c.paths;
        p.run_root = None;
        for slot in [
            &mut p.openreview,
            &mut p.papers,
            &mut p.dataset,
            &mut p.annotations,
            &mut p.model_feedback,
            &mut p.calibration,
            &mut p.stub_fixtures,
        ] {
            *slot = slot.as_deref().map(normalize);
        }
        let value = serde_json::to_value(&c).expect("config serializes");
        content_key(&value)
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}

/// Sets the field at a dotted path, creating intermediate objects.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form key.path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override `{assignment}` has an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    for k in &keys[..keys.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| format!("override `{path}`: `{k}` is inside a non-object"))?;
        cur = obj
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    cur.as_object_mut()
        .ok_or_else(|| format!("override `{path}` targets a field inside a non-object"))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Removes `.` components and folds `..` where possible, without touching the filesystem.
pub fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if matches!(out.components().next_back(), Some(Component::Normal(_))) {
                    out.pop();
                } else {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    if out.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loaded(overrides: &[&str]) -> LoadedConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        LoadedConfig::load(None, &o).unwrap()
    }

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.thresholds.human_human, 0.55);
        assert_eq!(c.thresholds.human_model, 0.45);
        assert_eq!(c.thresholds.dedup, 0.5);
        assert_eq!((c.sampling.k, c.sampling.iterations), (5, 1000));
        assert_eq!(c.mode, Mode::Stub);
    }

    #[test]
    fn overrides_by_dotted_path() {
        let l = loaded(&[
            "sampling.k=3",
            "thresholds.quality.accuracy=4.0",
            "mode=live",
            "paths.papers=x.jsonl",
        ]);
        assert_eq!(l.config.sampling.k, 3);
        assert_eq!(l.config.thresholds.quality.accuracy, 4.0);
        assert_eq!(l.config.mode, Mode::Live);
        assert_eq!(l.config.paths.papers, Some(PathBuf::from("x.jsonl")));
    }

    #[test]
    fn bad_overrides_are_reported() {
        assert!(matches!(
            LoadedConfig::load(None, &["nokey".into()]),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            LoadedConfig::load(None, &["sampling.x=1".into()]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn validation_collects_everything() {
        let l = loaded(&["sampling.iterations=1", "thresholds.dedup=2", "mode=live"]);
        let Err(CliError::Config(problems)) = l.validate(&["match"], &[("papers", None)]) else {
            panic!("expected config error");
        };
        assert_eq!(problems.len(), 4, "{problems:?}");
        assert!(problems.iter().any(|p| p.contains("`match`")));
    }

    #[test]
    fn hash_tracks_meaning_not_spelling() {
        let a = loaded(&["paths.papers=data/p.jsonl"]);
        let b = loaded(&[
            "paths.papers=./data/x/../p.jsonl",
            "parallel=false",
            "paths.run_root=/elsewhere",
        ]);
        let c = loaded(&["paths.papers=data/p.jsonl", "sampling.seed=1"]);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}

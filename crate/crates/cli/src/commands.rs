//! The pipeline commands.
//!
//! Every command validates its configuration, opens the run directory for the config hash,
//! writes its artifacts and section, and re-renders the run's report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fbeval_core::consensus::{
    bootstrap_match, build_consensus, calibrate_threshold, decompose_novel_aligned,
    distribution_weighted, improvement_table, judge_edges, prefilter_human_pairs,
    prefilter_model_pairs, score_model, ConsensusOptions, ConsensusSet, Decomposition,
    MatchEvalConfig, PairType, PaperMatchData, StratumTable,
};
use fbeval_core::domain::{FeedbackUnit, PaperRecord, Source, UnitId};
use fbeval_core::exec::Exec;
use fbeval_core::forge::{
    build_dpo, build_sft, corrupt, filter_stats, verify_and_filter, CorruptionVariant, DpoConfig,
    PairKind, GENERATION_PROMPT_VERSION,
};
use fbeval_core::ingest::{
    build_test_split, load_annotations, load_openreview, DatasetStore, TestSplitConfig,
};
use fbeval_core::judge::{
    names, CallAudit, EndpointConfig, JudgeClient, LiveBackend, PromptRegistry, ResponseCache,
    RetryPolicy, StubBackend,
};
use fbeval_core::parse::{agreement_report, parse_paper, Comparison, LabelKind};
use fbeval_core::successeval::{
    bootstrap_eval, evaluate_paper, is_success, BootstrapConfig, PaperEvaluation, SuccessMode,
    SuccessOptions,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{LoadedConfig, Mode, PipelineConfig};
use crate::inputs::{read_calibration, read_model_feedback, read_papers, ModelFeedback};
use crate::report::{Cell, EvalReport, Section, Table};
use crate::rundir::RunDir;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum Command {
    Ingest,
    Parse,
    ForgeSft,
    ForgeDpo,
    Calibrate,
    ConsensusEval,
    SuccessEval,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Parse => "parse",
            Command::ForgeSft => "forge-sft",
            Command::ForgeDpo => "forge-dpo",
            Command::Calibrate => "calibrate",
            Command::ConsensusEval => "consensus-eval",
            Command::SuccessEval => "success-eval",
            Command::Report => "report",
        }
    }

    /// Judge tasks the command calls.
    pub fn tasks(self) -> &'static [&'static str] {
        match self {
            Command::Parse => &["parse"],
            Command::ForgeDpo => &["corrupt", "verify", "embed"],
            Command::ConsensusEval => &["embed", "match"],
            Command::SuccessEval => &["quality", "predict"],
            _ => &[],
        }
    }
}

/// Saved next to the artifacts so `report` can re-render a run directory on its own.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunRecord {
    config_hash: String,
    base_dir: PathBuf,
    config: PipelineConfig,
}

#[derive(Debug)]
pub struct Outcome {
    pub run_dir: PathBuf,
    pub report: EvalReport,
}

/// Runs `command` under `cfg`.
pub fn run(command: Command, cfg: &LoadedConfig) -> Result<Outcome, CliError> {
    let paths = &cfg.config.paths;
    let mut required: Vec<(&str, Option<&PathBuf>)> = Vec::new();
    match command {
        Command::Ingest if paths.openreview.is_none() => {
            required.push(("papers", paths.papers.as_ref()))
        }
        Command::Calibrate => required.push(("calibration", paths.calibration.as_ref())),
        Command::ConsensusEval | Command::SuccessEval => {
            required.push(("model_feedback", paths.model_feedback.as_ref()))
        }
        _ => {}
    }
    cfg.validate(command.tasks(), &required)?;
    let hash = cfg.hash();
    let run = RunDir::open(cfg.run_root().join(&hash[..16]))?;
    let record = RunRecord {
        config_hash: hash.clone(),
        base_dir: std::path::absolute(&cfg.base_dir).map_err(|e| CliError::io(&cfg.base_dir, e))?,
        config: cfg.config.clone(),
    };
    run.write_json(&run.root().join("config.json"), &record)?;
    if command != Command::Report {
        let mut ctx = Ctx::new(command, cfg, &run)?;
        let section = match command {
            Command::Ingest => ctx.ingest()?,
            Command::Parse => ctx.parse()?,
            Command::ForgeSft => ctx.forge_sft()?,
            Command::ForgeDpo => ctx.forge_dpo()?,
            Command::Calibrate => ctx.calibrate()?,
            Command::ConsensusEval => ctx.consensus_eval()?,
            Command::SuccessEval => ctx.success_eval()?,
            Command::Report => unreachable!(),
        };
        run.write_json(
            &run.artifacts(command.name())?.join("provenance.json"),
            &json!({"config_hash": hash, "prompt_versions": section.prompt_versions}),
        )?;
        run.write_section(&section)?;
        run.write_log(command.name(), &ctx.events)?;
    }
    let report = assemble(&run, &record)?;
    run.write_report(&report)?;
    Ok(Outcome {
        run_dir: run.root().to_path_buf(),
        report,
    })
}

/// Re-renders the report of an existing run directory.
pub fn rerender(run_dir: &Path) -> Result<Outcome, CliError> {
    let path = run_dir.join("config.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let record: RunRecord = serde_json::from_str(&text).map_err(|e| CliError::Input {
        command: "report".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    let run = RunDir::open(run_dir)?;
    let report = assemble(&run, &record)?;
    run.write_report(&report)?;
    Ok(Outcome {
        run_dir: run_dir.to_path_buf(),
        report,
    })
}

fn assemble(run: &RunDir, record: &RunRecord) -> Result<EvalReport, CliError> {
    let mut sections = run.sections()?;
    if let Some(s) = decomposition_section(run, &record.config)? {
        sections.push(s);
    }
    let mode = match record.config.mode {
        Mode::Stub => "stub",
        Mode::Live => "live",
    };
    Ok(EvalReport::assemble(
        &record.config_hash,
        mode,
        record.config.sampling.seed,
        sections,
    ))
}

struct Ctx<'a> {
    command: Command,
    cfg: &'a LoadedConfig,
    run: &'a RunDir,
    client: JudgeClient,
    exec: Exec,
    events: Vec<Value>,
}

impl<'a> Ctx<'a> {
    fn new(command: Command, cfg: &'a LoadedConfig, run: &'a RunDir) -> Result<Self, CliError> {
        let client = match cfg.config.mode {
            Mode::Stub => {
                let backend = match &cfg.config.paths.stub_fixtures {
                    Some(p) => {
                        StubBackend::from_file(&cfg.resolve(p)).map_err(|e| CliError::Pipeline {
                            command: command.name().into(),
                            paper_id: None,
                            source: e,
                        })?
                    }
                    None => StubBackend::default(),
                };
                JudgeClient::stub(backend)
            }
            Mode::Live => {
                let cache =
                    ResponseCache::on_disk(run.cache_dir()).map_err(|e| CliError::Pipeline {
                        command: command.name().into(),
                        paper_id: None,
                        source: e,
                    })?;
                JudgeClient::new(
                    Arc::new(LiveBackend::new(RetryPolicy::default())),
                    PromptRegistry::builtin(),
                )
                .with_cache(Arc::new(cache))
            }
        };
        Ok(Ctx {
            command,
            cfg,
            run,
            client,
            exec: if cfg.config.parallel {
                Exec::Parallel
            } else {
                Exec::Sequential
            },
            events: Vec::new(),
        })
    }

    fn conf(&self) -> &PipelineConfig {
        &self.cfg.config
    }

    fn fail(&self, paper_id: Option<&str>) -> impl Fn(fbeval_core::Error) -> CliError + '_ {
        let paper_id = paper_id.map(str::to_string);
        move |source| CliError::Pipeline {
            command: self.command.name().into(),
            paper_id: paper_id.clone(),
            source,
        }
    }

    fn input_error(&self, message: impl Into<String>) -> CliError {
        CliError::Input {
            command: self.command.name().into(),
            message: message.into(),
        }
    }

    fn endpoint(&self, task: &str) -> EndpointConfig {
        self.cfg
            .endpoint(task)
            .expect("endpoints are checked during validation")
    }

    fn event(&mut self, event: &str, detail: Value) {
        let mut v = json!({"command": self.command.name(), "event": event});
        if let (Some(obj), Value::Object(extra)) = (v.as_object_mut(), detail) {
            obj.extend(extra);
        }
        self.events.push(v);
    }

    fn audit_event(&mut self, audits: &[CallAudit]) {
        let mut by_template: BTreeMap<&str, (usize, u64, u64)> = BTreeMap::new();
        for a in audits {
            let e = by_template.entry(a.template.as_str()).or_default();
            e.0 += 1;
            e.1 += a.usage.prompt_tokens;
            e.2 += a.usage.completion_tokens;
        }
        let detail: BTreeMap<&str, Value> = by_template
            .into_iter()
            .map(|(t, (n, i, o))| {
                (
                    t,
                    json!({"calls": n, "prompt_tokens": i, "completion_tokens": o}),
                )
            })
            .collect();
        self.event("judge_calls", json!({ "templates": detail }));
    }

    fn section(&self, tables: Vec<Table>, details: Vec<Table>, templates: &[&str]) -> Section {
        let prompt_versions = templates
            .iter()
            .map(|t| {
                let tag = match self.client.registry().get(t) {
                    Ok(p) => p.version_tag(),
                    Err(_) => GENERATION_PROMPT_VERSION.to_string(),
                };
                (t.to_string(), tag)
            })
            .collect();
        Section {
            command: self.command.name().into(),
            tables,
            details,
            prompt_versions,
        }
    }

    /// Explicit `paths.dataset`, else the parsed store of this run, else its ingested store.
    fn dataset(&self, parsed: bool) -> Result<DatasetStore, CliError> {
        let candidates = [
            self.conf()
                .paths
                .dataset
                .as_ref()
                .map(|p| self.cfg.resolve(p)),
            parsed.then(|| self.run.artifact_path("parse").join("dataset")),
            Some(self.run.artifact_path("ingest").join("dataset")),
        ];
        let root = candidates
            .into_iter()
            .flatten()
            .find(|p| p.join("manifest.json").is_file())
            .ok_or_else(|| {
                self.input_error("no dataset store: set paths.dataset or run `ingest` first")
            })?;
        DatasetStore::load_with(&root, self.exec).map_err(self.fail(None))
    }

    fn ingest(&mut self) -> Result<Section, CliError> {
        let paths = &self.conf().paths;
        let records = match (&paths.papers, &paths.openreview) {
            (Some(p), _) => read_papers(self.command.name(), &self.cfg.resolve(p))?,
            (None, Some(p)) => load_openreview(self.cfg.resolve(p)).map_err(self.fail(None))?,
            (None, None) => unreachable!("validated"),
        };
        let all = DatasetStore::from_splits(BTreeMap::from([("all".to_string(), records)]))
            .map_err(self.fail(None))?;
        let seed = self.conf().sampling.seed;
        let pools = TestSplitConfig {
            pools: self.conf().split.pools.clone(),
        };
        let test_ids = build_test_split(&all, &pools, seed).map_err(self.fail(None))?;
        let store = all
            .partition(&test_ids, self.conf().split.dev_size, seed)
            .map_err(self.fail(None))?;
        let out = self.run.artifacts("ingest")?.join("dataset");
        store.write(&out).map_err(self.fail(None))?;
        let mut t = Table::new(
            "dataset_splits",
            "Dataset splits",
            &["Split", "Papers", "Accepted", "Rejected", "Unknown"],
        );
        for (name, s) in store.summary() {
            t.push(vec![
                Cell::Text(name),
                Cell::Count(s.total),
                Cell::Count(s.accepted),
                Cell::Count(s.rejected),
                Cell::Count(s.unknown),
            ]);
        }
        self.event(
            "dataset_written",
            json!({"papers": store.len(), "test": test_ids.len()}),
        );
        Ok(self.section(vec![t], vec![], &[]))
    }

    fn parse(&mut self) -> Result<Section, CliError> {
        let mut store = self.dataset(false)?;
        let ep = self.endpoint("parse");
        let mut records: Vec<&PaperRecord> = store.records().collect();
        records.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
        let client = &self.client;
        let done = self.exec.try_map(&records, |r| {
            parse_paper(client, &ep, r).map_err(self.fail(Some(&r.paper_id)))
        })?;
        let mut updated = Vec::with_capacity(done.len());
        let mut audits = Vec::new();
        let (mut dropped, mut merged) = (0u64, 0usize);
        for (record, results) in done {
            for r in results {
                dropped += r.dropped_note;
                merged += r.merged_duplicates;
                audits.push(r.audit);
            }
            updated.push(record);
        }
        store.update_records(updated).map_err(self.fail(None))?;
        let dir = self.run.artifacts("parse")?;
        store.write(dir.join("dataset")).map_err(self.fail(None))?;
        self.run.write_jsonl(&dir.join("calls.jsonl"), &audits)?;
        self.audit_event(&audits);
        self.event(
            "threads_parsed",
            json!({"dropped_praise": dropped, "merged_duplicates": merged}),
        );

        let mut t = Table::new(
            "parsed_units",
            "Parsed feedback units",
            &["Split", "Papers", "Units", "Successful", "Success rate"],
        );
        let splits: Vec<String> = store.split_names().map(str::to_string).collect();
        for name in &splits {
            let papers = store.split(name).map_err(self.fail(None))?;
            let units: Vec<&FeedbackUnit> = papers
                .iter()
                .flat_map(|p| p.units.iter().filter(|u| u.source == Source::Human))
                .collect();
            let ok = units.iter().filter(|u| u.is_successful()).count();
            let rate = if units.is_empty() {
                Cell::Na
            } else {
                Cell::Metric(ok as f64 / units.len() as f64)
            };
            t.push(vec![
                Cell::text(name),
                Cell::Count(papers.len()),
                Cell::Count(units.len()),
                Cell::Count(ok),
                rate,
            ]);
        }
        let mut tables = vec![t];
        if let Some(p) = &self.conf().paths.annotations {
            let annotations = load_annotations(self.cfg.resolve(p)).map_err(self.fail(None))?;
            let units: Vec<FeedbackUnit> = store
                .records()
                .flat_map(|r| r.units.iter().cloned())
                .collect();
            let rows = agreement_report(&annotations, &units).map_err(self.fail(None))?;
            let mut a = Table::new(
                "label_agreement",
                "Label agreement",
                &[
                    "Label",
                    "Comparison",
                    "n",
                    "Agreement",
                    "PABAK",
                    "Cohen kappa",
                ],
            );
            for r in rows {
                a.push(vec![
                    Cell::text(match r.label {
                        LabelKind::Validity => "validity",
                        LabelKind::Action => "action",
                    }),
                    Cell::text(match r.comparison {
                        Comparison::InterAnnotator => "inter-annotator",
                        Comparison::JudgeVsHuman => "judge vs human",
                    }),
                    Cell::Count(r.n),
                    Cell::Metric(r.observed_agreement),
                    Cell::Metric(r.pabak),
                    if r.kappa_degenerate {
                        Cell::Na
                    } else {
                        Cell::Metric(r.cohen_kappa)
                    },
                ]);
            }
            tables.push(a);
        }
        Ok(self.section(tables, vec![], &[names::PARSE_THREAD]))
    }

    fn forge_sft(&mut self) -> Result<Section, CliError> {
        let store = self.dataset(true)?;
        let split = self.conf().split.train_split.clone();
        let manifest =
            build_sft(&store, &split, self.run.artifacts("forge-sft")?).map_err(self.fail(None))?;
        self.event(
            "sft_written",
            json!({"split": split, "examples": manifest.record_count}),
        );
        let mut t = Table::new("sft_data", "SFT data", &["Split", "Examples"]);
        t.push(vec![Cell::Text(split), Cell::Count(manifest.record_count)]);
        Ok(self.section(vec![t], vec![], &["generation"]))
    }

    fn forge_dpo(&mut self) -> Result<Section, CliError> {
        let store = self.dataset(true)?;
        let split = self.conf().split.train_split.clone();
        let papers = store.split(&split).map_err(self.fail(None))?;
        let (cep, vep) = (self.endpoint("corrupt"), self.endpoint("verify"));
        let seed = self.conf().sampling.seed;
        let jobs: Vec<(&PaperRecord, &FeedbackUnit)> = papers
            .iter()
            .flat_map(|p| {
                p.units
                    .iter()
                    .filter(|u| u.source == Source::Human && u.is_successful())
                    .map(move |u| (p, u))
            })
            .collect();
        let client = &self.client;
        let done = self.exec.try_map(&jobs, |(p, u)| {
            let fail = self.fail(Some(&p.paper_id));
            let (variants, a1) = corrupt(client, &cep, u, p).map_err(&fail)?;
            let outcome = verify_and_filter(client, &vep, u, p, &variants, seed).map_err(&fail)?;
            Ok::<_, CliError>((u.id.clone(), outcome, a1))
        })?;
        let mut bank: BTreeMap<UnitId, Vec<CorruptionVariant>> = BTreeMap::new();
        let mut audits = Vec::new();
        for (id, outcome, a1) in done {
            audits.push(a1);
            audits.push(outcome.audit);
            bank.insert(id, outcome.verified);
        }
        let all: Vec<CorruptionVariant> = bank.values().flatten().cloned().collect();
        let dir = self.run.artifacts("forge-dpo")?;
        self.run.write_jsonl(&dir.join("corruptions.jsonl"), &all)?;
        self.run.write_jsonl(&dir.join("calls.jsonl"), &audits)?;
        self.audit_event(&audits);

        let d = &self.conf().dpo;
        let dpo_cfg = DpoConfig {
            set_size: d.set_size,
            min_delta: self.conf().thresholds.min_delta,
            real_pairs_per_paper: d.real_pairs_per_paper,
            chosen_successful_only: d.chosen_successful_only,
            dedup_threshold: self.conf().thresholds.dedup,
            max_corruption_pairs_per_paper: d.max_corruption_pairs_per_paper,
            seed,
        };
        let (manifest, output) = build_dpo(
            &self.client,
            &self.endpoint("embed"),
            &store,
            &split,
            &bank,
            &dpo_cfg,
            &dir,
            self.exec,
        )
        .map_err(self.fail(None))?;
        self.event(
            "dpo_written",
            json!({"split": split, "pairs": manifest.record_count, "skipped": output.skipped.len()}),
        );

        let mut f = Table::new(
            "corruption_filter",
            "Corruption filter",
            &[
                "Dimension",
                "Verified",
                "Accuracy",
                "Target degradation",
                "Collateral preservation",
                "Kept",
            ],
        );
        for (dim, s) in filter_stats(&all) {
            f.push(vec![
                Cell::text(dim.as_str()),
                Cell::Count(s.verified),
                Cell::Metric(s.accuracy),
                Cell::Metric(s.mean_target_degradation),
                Cell::Metric(s.mean_collateral_preservation),
                Cell::Count(s.kept),
            ]);
        }
        let mut p = Table::new("preference_pairs", "Preference pairs", &["Kind", "Pairs"]);
        for (kind, label) in [
            (PairKind::RealLabel, "real_label"),
            (PairKind::Corruption, "corruption"),
        ] {
            let n = output.pairs.iter().filter(|x| x.pair_kind == kind).count();
            p.push(vec![Cell::text(label), Cell::Count(n)]);
        }
        let mut skipped = Table::new(
            "dpo_skipped",
            "Papers without preference pairs",
            &["Paper", "Reason"],
        );
        for s in &output.skipped {
            skipped.push(vec![Cell::text(&s.paper_id), Cell::text(&s.reason)]);
        }
        Ok(self.section(
            vec![f, p],
            vec![skipped],
            &[
                names::CORRUPT_FEEDBACK,
                names::VERIFY_CORRUPTION,
                "generation",
            ],
        ))
    }

    fn calibrate(&mut self) -> Result<Section, CliError> {
        let path = self
            .cfg
            .resolve(self.conf().paths.calibration.as_ref().expect("validated"));
        let pairs = read_calibration(self.command.name(), &path)?;
        let cutoff = self.conf().thresholds.match_rate_cutoff;
        let mut strata = Table::new(
            "match_rate_strata",
            "Match rate by cosine stratum",
            &[
                "Pair type",
                "Range",
                "Annotated",
                "Match rate",
                "Weight",
                "Accuracy",
                "Precision",
                "Recall",
                "F1",
            ],
        );
        let mut summary = Table::new(
            "calibrated_thresholds",
            "Calibrated thresholds and weighted judge agreement",
            &[
                "Pair type",
                "Threshold",
                "Accuracy",
                "Precision",
                "Recall",
                "F1",
            ],
        );
        let mut saved = BTreeMap::new();
        for (pt, label) in [
            (PairType::HumanHuman, "human_human"),
            (PairType::HumanModel, "human_model"),
        ] {
            let of_type: Vec<_> = pairs.iter().filter(|p| p.pair_type == pt).collect();
            let annotated: Vec<(f64, bool)> = of_type
                .iter()
                .filter_map(|p| Some((p.cosine, p.human_match?)))
                .collect();
            if annotated.is_empty() {
                continue;
            }
            let mut table = StratumTable::default().with_annotations(&annotated);
            let threshold = calibrate_threshold(&table, cutoff).map_err(self.fail(None))?;
            let judged: Vec<(f64, bool, bool)> = of_type
                .iter()
                .filter_map(|p| Some((p.cosine, p.human_match?, p.judged?)))
                .filter(|(c, _, _)| *c >= threshold)
                .collect();
            let population: Vec<f64> = of_type
                .iter()
                .filter(|p| p.human_match.is_none())
                .map(|p| p.cosine)
                .collect();
            let mut weighted = None;
            if !judged.is_empty() && !population.is_empty() {
                table = table
                    .with_judge_labels(&judged)
                    .and_then(|t| t.with_population(&population, threshold))
                    .map_err(self.fail(None))?;
                weighted = Some(distribution_weighted(&table).map_err(self.fail(None))?);
            }
            for s in &table.strata {
                let opt = |v: Option<f64>| v.map(Cell::Metric).unwrap_or(Cell::Na);
                strata.push(vec![
                    Cell::text(label),
                    Cell::Text(format!("[{:.2}, {:.2})", s.lower, s.upper)),
                    Cell::Count(s.annotated_pairs),
                    opt(s.match_rate),
                    opt(s.weight),
                    opt(s.metrics.map(|m| m.accuracy)),
                    opt(s.metrics.map(|m| m.precision)),
                    opt(s.metrics.map(|m| m.recall)),
                    opt(s.metrics.map(|m| m.f1)),
                ]);
            }
            let m = |f: fn(&fbeval_core::consensus::JudgeMetrics) -> f64| {
                weighted
                    .as_ref()
                    .map(|w| Cell::Metric(f(w)))
                    .unwrap_or(Cell::Na)
            };
            summary.push(vec![
                Cell::text(label),
                Cell::Metric(threshold),
                m(|w| w.accuracy),
                m(|w| w.precision),
                m(|w| w.recall),
                m(|w| w.f1),
            ]);
            saved.insert(
                label,
                json!({"threshold": threshold, "strata": table, "weighted": weighted}),
            );
            self.event(
                "threshold_calibrated",
                json!({"pair_type": label, "threshold": threshold}),
            );
        }
        if saved.is_empty() {
            return Err(self.input_error(format!("{}: no annotated pairs", path.display())));
        }
        let dir = self.run.artifacts("calibrate")?;
        self.run.write_json(&dir.join("calibration.json"), &saved)?;
        Ok(self.section(vec![summary, strata], vec![], &[]))
    }

    fn model_feedback(&self) -> Result<ModelFeedback, CliError> {
        let p = self.cfg.resolve(
            self.conf()
                .paths
                .model_feedback
                .as_ref()
                .expect("validated"),
        );
        read_model_feedback(self.command.name(), &p)
    }

    /// Evaluation papers, checking that feedback only names papers of the split.
    fn eval_papers<'s>(
        &self,
        store: &'s DatasetStore,
        feedback: &ModelFeedback,
    ) -> Result<Vec<&'s PaperRecord>, CliError> {
        let split = &self.conf().split.eval_split;
        let papers: Vec<&PaperRecord> = store
            .split(split)
            .map_err(self.fail(None))?
            .iter()
            .collect();
        let ids: BTreeSet<&str> = papers.iter().map(|p| p.paper_id.as_str()).collect();
        for (system, per_paper) in feedback {
            if let Some(unknown) = per_paper.keys().find(|k| !ids.contains(k.as_str())) {
                return Err(self.input_error(format!(
                    "system {system} has feedback for paper {unknown}, which is not in split `{split}`"
                )));
            }
        }
        Ok(papers)
    }

    fn consensus_eval(&mut self) -> Result<Section, CliError> {
        let store = self.dataset(true)?;
        let feedback = self.model_feedback()?;
        let papers = self.eval_papers(&store, &feedback)?;
        let (eep, mep) = (self.endpoint("embed"), self.endpoint("match"));
        let t = &self.conf().thresholds;
        let (hh, hm) = (t.human_human, t.human_model);
        let options = ConsensusOptions {
            partner_must_succeed: self.conf().consensus.partner_must_succeed,
        };
        let client = &self.client;
        let systems: Vec<&String> = feedback.keys().collect();

        let per_paper = self.exec.try_map(&papers, |paper| {
            let fail = self.fail(Some(&paper.paper_id));
            let humans: Vec<FeedbackUnit> = paper
                .units
                .iter()
                .filter(|u| u.source == Source::Human)
                .cloned()
                .collect();
            let models: Vec<(&String, &[FeedbackUnit])> = systems
                .iter()
                .filter_map(|s| Some((*s, feedback[*s].get(&paper.paper_id)?.as_slice())))
                .collect();
            let mut texts: BTreeMap<UnitId, String> = BTreeMap::new();
            for u in humans
                .iter()
                .chain(models.iter().flat_map(|(_, m)| m.iter()))
            {
                texts.insert(u.id.clone(), u.text.clone());
            }
            let mut audits = Vec::new();
            let mut edges = Vec::new();
            let mut consensus = ConsensusSet {
                paper_id: paper.paper_id.clone(),
                ..ConsensusSet::default()
            };
            let mut scored = Vec::new();
            if !texts.is_empty() {
                let vectors = client
                    .embed_table(&eep, texts.values().map(String::as_str))
                    .map_err(&fail)?;
                let candidates = prefilter_human_pairs(&humans, &vectors, hh).map_err(&fail)?;
                let (judged, a) = judge_edges(
                    client,
                    &mep,
                    &candidates,
                    &paper.abstract_text,
                    &texts,
                    Exec::Sequential,
                )
                .map_err(&fail)?;
                audits.extend(a);
                consensus = build_consensus(&paper.paper_id, &humans, &judged, options);
                edges.extend(judged);
                let members: Vec<FeedbackUnit> = humans
                    .iter()
                    .filter(|u| consensus.members.contains(&u.id))
                    .cloned()
                    .collect();
                for (system, units) in &models {
                    let candidates =
                        prefilter_model_pairs(&members, units, &vectors, hm).map_err(&fail)?;
                    let (judged, a) = judge_edges(
                        client,
                        &mep,
                        &candidates,
                        &paper.abstract_text,
                        &texts,
                        Exec::Sequential,
                    )
                    .map_err(&fail)?;
                    audits.extend(a);
                    edges.extend(judged.iter().cloned());
                    scored.push((
                        (*system).clone(),
                        PaperMatchData {
                            consensus: consensus.clone(),
                            model_units: units.iter().map(|u| u.id.clone()).collect(),
                            edges: judged,
                        },
                    ));
                }
            }
            Ok::<_, CliError>((consensus, edges, scored, audits))
        })?;

        let mut all_edges: Vec<Value> = Vec::new();
        let mut consensus_sets = Vec::new();
        let mut by_system: BTreeMap<String, Vec<PaperMatchData>> = BTreeMap::new();
        let mut audits = Vec::new();
        for (consensus, edges, scored, a) in per_paper {
            for e in edges {
                all_edges.push(json!({"paper_id": consensus.paper_id, "edge": e}));
            }
            for (system, data) in scored {
                by_system.entry(system).or_default().push(data);
            }
            consensus_sets.push(consensus);
            audits.extend(a);
        }
        let dir = self.run.artifacts("consensus-eval")?;
        self.run.write_jsonl(&dir.join("edges.jsonl"), &all_edges)?;
        self.run
            .write_jsonl(&dir.join("consensus.jsonl"), &consensus_sets)?;
        self.run.write_jsonl(&dir.join("calls.jsonl"), &audits)?;
        self.audit_event(&audits);

        let with_consensus: Vec<&ConsensusSet> = consensus_sets
            .iter()
            .filter(|c| !c.members.is_empty())
            .collect();
        let mean_size = if with_consensus.is_empty() {
            Cell::Na
        } else {
            Cell::Metric(
                with_consensus
                    .iter()
                    .map(|c| c.members.len())
                    .sum::<usize>() as f64
                    / with_consensus.len() as f64,
            )
        };
        let mut overview = Table::new(
            "consensus_overview",
            "Human consensus",
            &["Papers", "With consensus", "Mean consensus size"],
        );
        overview.push(vec![
            Cell::Count(consensus_sets.len()),
            Cell::Count(with_consensus.len()),
            mean_size,
        ]);
        self.event(
            "consensus_built",
            json!({"papers": consensus_sets.len(), "with_consensus": with_consensus.len()}),
        );

        let s = self.conf().sampling;
        let c = self.conf().consensus;
        let eval_cfg = MatchEvalConfig {
            k: s.k,
            iterations: s.iterations,
            seed: s.seed,
            granularity: c.granularity,
            aggregation: c.aggregation,
        };
        let mut main = Table::new(
            "consensus_match",
            "Consensus matching",
            &["System", "P", "R", "F1", "P CI", "R CI", "F1 CI", "Papers"],
        );
        let mut details = Table::new(
            "consensus_match_papers",
            "Consensus matching",
            &[
                "System",
                "Paper",
                "Consensus",
                "Model units",
                "P",
                "R",
                "F1",
            ],
        );
        let mut matched: BTreeMap<String, BTreeSet<UnitId>> = BTreeMap::new();
        for (system, data) in &by_system {
            let usable: Vec<PaperMatchData> = data
                .iter()
                .filter(|d| !d.consensus.members.is_empty())
                .cloned()
                .collect();
            let set = matched.entry(system.clone()).or_default();
            for d in &usable {
                let full = score_model(&d.consensus, &d.model_units, &d.edges, c.granularity)
                    .map_err(self.fail(Some(&d.consensus.paper_id)))?;
                details.push(vec![
                    Cell::text(system),
                    Cell::text(&d.consensus.paper_id),
                    Cell::Count(d.consensus.members.len()),
                    Cell::Count(d.model_units.len()),
                    Cell::Metric(full.precision),
                    Cell::Metric(full.recall),
                    Cell::Metric(full.f1),
                ]);
                set.extend(full.matched_model_units);
            }
            if usable.is_empty() {
                main.push(vec![
                    Cell::text(system),
                    Cell::Na,
                    Cell::Na,
                    Cell::Na,
                    Cell::Na,
                    Cell::Na,
                    Cell::Na,
                    Cell::Count(0),
                ]);
                continue;
            }
            let b = bootstrap_match(&usable, &eval_cfg, self.exec).map_err(self.fail(None))?;
            main.push(vec![
                Cell::text(system),
                Cell::Metric(b.precision.point_estimate),
                Cell::Metric(b.recall.point_estimate),
                Cell::Metric(b.f1.point_estimate),
                Cell::Metric(b.precision.half_width()),
                Cell::Metric(b.recall.half_width()),
                Cell::Metric(b.f1.half_width()),
                Cell::Count(b.papers),
            ]);
        }
        self.run.write_json(&dir.join("matched.json"), &matched)?;
        Ok(self.section(
            vec![overview, main],
            vec![details],
            &[names::MATCH_FEEDBACK],
        ))
    }

    fn success_eval(&mut self) -> Result<Section, CliError> {
        let store = self.dataset(true)?;
        let feedback = self.model_feedback()?;
        let papers = self.eval_papers(&store, &feedback)?;
        let (qep, pep) = (self.endpoint("quality"), self.endpoint("predict"));
        let jobs: Vec<(&String, &PaperRecord, &[FeedbackUnit])> = feedback
            .iter()
            .flat_map(|(system, per_paper)| {
                papers
                    .iter()
                    .filter_map(move |p| Some((system, *p, per_paper.get(&p.paper_id)?.as_slice())))
            })
            .filter(|(_, _, units)| !units.is_empty())
            .collect();
        let client = &self.client;
        let done = self.exec.try_map(&jobs, |(system, paper, units)| {
            let (eval, audits) = evaluate_paper(client, &qep, &pep, paper, units, Exec::Sequential)
                .map_err(self.fail(Some(&paper.paper_id)))?;
            Ok::<_, CliError>(((*system).clone(), eval, audits))
        })?;
        let options = SuccessOptions {
            thresholds: self.conf().thresholds.quality,
            filter_all_modes: self.conf().success.filter_all_modes,
        };
        let mut by_system: BTreeMap<String, Vec<PaperEvaluation>> = BTreeMap::new();
        let mut audits = Vec::new();
        let mut rows = Vec::new();
        let mut outcomes: BTreeMap<String, Vec<UnitOutcome>> = BTreeMap::new();
        let mut details = Table::new(
            "success_rate_papers",
            "Success rate",
            &["System", "Paper", "Units", "Combined"],
        );
        let units_by_id: BTreeMap<(&str, &UnitId), &FeedbackUnit> = jobs
            .iter()
            .flat_map(|(s, _, units)| units.iter().map(move |u| ((s.as_str(), &u.id), u)))
            .collect();
        for (system, eval, a) in done {
            audits.extend(a);
            let combined: Vec<bool> = eval
                .units
                .iter()
                .map(|u| is_success(u, SuccessMode::Combined, &options))
                .collect();
            details.push(vec![
                Cell::text(&system),
                Cell::text(&eval.paper_id),
                Cell::Count(eval.units.len()),
                Cell::Metric(
                    combined.iter().filter(|x| **x).count() as f64 / combined.len() as f64,
                ),
            ]);
            for (u, ok) in eval.units.iter().zip(combined) {
                outcomes
                    .entry(system.clone())
                    .or_default()
                    .push(UnitOutcome {
                        unit: (*units_by_id[&(system.as_str(), &u.unit_id)]).clone(),
                        success: ok,
                    });
                rows.push(json!({"system": system, "paper_id": eval.paper_id, "evaluation": u}));
            }
            by_system.entry(system).or_default().push(eval);
        }
        let dir = self.run.artifacts("success-eval")?;
        self.run
            .write_jsonl(&dir.join("evaluations.jsonl"), &rows)?;
        self.run.write_jsonl(&dir.join("calls.jsonl"), &audits)?;
        self.run.write_json(&dir.join("outcomes.json"), &outcomes)?;
        self.audit_event(&audits);

        let s = self.conf().sampling;
        let boot = BootstrapConfig {
            k: s.k,
            iterations: s.iterations,
            seed: s.seed,
        };
        let mut main = Table::new(
            "success_rate",
            "Success rate (%)",
            &[
                "System",
                "Combined",
                "CI",
                "Validity only",
                "CI",
                "Action only",
                "CI",
            ],
        );
        for (system, evals) in &by_system {
            let r = bootstrap_eval(evals, &boot, &options, self.exec).map_err(self.fail(None))?;
            let mut row = vec![Cell::text(system)];
            for m in SuccessMode::ALL {
                row.push(Cell::Percent(r[&m].point_estimate));
                row.push(Cell::Percent(r[&m].half_width()));
            }
            main.push(row);
        }
        self.event(
            "success_evaluated",
            json!({"systems": by_system.len(), "papers": jobs.len()}),
        );
        Ok(self.section(
            vec![main],
            vec![details],
            &[names::QUALITY_SCORE, names::PREDICT_RESPONSE],
        ))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UnitOutcome {
    unit: FeedbackUnit,
    success: bool,
}

/// Aligned/novel split per system, present once both evaluations have run.
fn decomposition_section(
    run: &RunDir,
    config: &PipelineConfig,
) -> Result<Option<Section>, CliError> {
    let matched_path = run.artifact_path("consensus-eval").join("matched.json");
    let outcomes_path = run.artifact_path("success-eval").join("outcomes.json");
    if !matched_path.is_file() || !outcomes_path.is_file() {
        return Ok(None);
    }
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::io(p, e));
    let bad = |p: &Path, e: serde_json::Error| CliError::Input {
        command: "report".into(),
        message: format!("{}: {e}", p.display()),
    };
    let matched: BTreeMap<String, BTreeSet<UnitId>> =
        serde_json::from_str(&read(&matched_path)?).map_err(|e| bad(&matched_path, e))?;
    let outcomes: BTreeMap<String, Vec<UnitOutcome>> =
        serde_json::from_str(&read(&outcomes_path)?).map_err(|e| bad(&outcomes_path, e))?;
    let empty = BTreeSet::new();
    let mut decomposed: BTreeMap<&String, Decomposition> = BTreeMap::new();
    for (system, units) in &outcomes {
        let feedback: Vec<FeedbackUnit> = units.iter().map(|u| u.unit.clone()).collect();
        let success: BTreeMap<UnitId, bool> = units
            .iter()
            .map(|u| (u.unit.id.clone(), u.success))
            .collect();
        let d = decompose_novel_aligned(&feedback, matched.get(system).unwrap_or(&empty), &success)
            .map_err(|e| CliError::Pipeline {
                command: "report".into(),
                paper_id: None,
                source: e,
            })?;
        decomposed.insert(system, d);
    }
    let mut overall = Table::new(
        "aligned_novel",
        "Aligned and novel feedback (%)",
        &["System", "Units", "Aligned", "Novel"],
    );
    let mut aspects = Table::new(
        "aligned_novel_aspects",
        "Aligned and novel feedback by aspect (%)",
        &[
            "System",
            "Aspect",
            "Units",
            "Aligned",
            "Novel",
            "Aligned change",
            "Novel change",
        ],
    );
    let baseline = config
        .report
        .baseline_system
        .as_ref()
        .and_then(|b| decomposed.get(b));
    for (system, d) in &decomposed {
        overall.push(vec![
            Cell::text(*system),
            Cell::Count(d.total_units),
            Cell::Percent(d.aligned_rate),
            Cell::Percent(d.novel_rate),
        ]);
        let changes = baseline.map(|b| improvement_table(d, b));
        for (aspect, r) in &d.per_aspect {
            let (ca, cn) = match changes.as_ref().and_then(|c| c.get(aspect)) {
                Some((a, n)) => (Cell::Text(a.to_string()), Cell::Text(n.to_string())),
                None => (Cell::Na, Cell::Na),
            };
            aspects.push(vec![
                Cell::text(*system),
                Cell::text(aspect),
                Cell::Count(r.units),
                Cell::Percent(r.aligned_rate),
                Cell::Percent(r.novel_rate),
                ca,
                cn,
            ]);
        }
    }
    Ok(Some(Section {
        command: "aligned-novel".into(),
        tables: vec![overall, aspects],
        details: vec![],
        prompt_versions: BTreeMap::new(),
    }))
}

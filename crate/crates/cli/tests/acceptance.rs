//! Gating acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the terminal; the process
//! exits nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fbeval_cli::{run, Cell, Command, LoadedConfig, EXIT_CONFIG};
use fbeval_core::consensus::{
    bootstrap_match, calibrate_threshold, distribution_weighted_rows, score_model, Aggregation,
    ConsensusSet, Granularity, JudgeMetrics, MatchEdge, MatchEvalConfig, PairType, PaperMatchData,
    StratumTable, ROUNDED_WEIGHT_TOLERANCE,
};
use fbeval_core::domain::{
    success_indicator, AuthorAction, FeedbackUnit, PaperRecord, Source, UnitId, Validity,
};
use fbeval_core::exec::Exec;
use fbeval_core::forge::{
    apply_filter, build_dpo_pairs, CorruptionBank, CorruptionDimension, CorruptionVariant,
    DpoConfig, PairKind, Verification,
};
use fbeval_core::judge::TextVectors;
use fbeval_core::stats::{
    cohen_kappa, fisher_exact, krippendorff_alpha, mann_whitney_u, pabak, ContingencyTable,
};
use fbeval_core::successeval::{
    bootstrap_eval, success_rate, BootstrapConfig, EvaluatedUnit, PaperEvaluation,
    PredictedResponse, QualityScores, SuccessMode, SuccessOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || {
        format!("{what}: {a} vs {b} (tolerance {tol})")
    })
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// 1. Agreement statistics.

fn brute_kappa(pairs: &[(u8, u8)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let p_o = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
    let mut chance = 0usize;
    for (a, _) in pairs {
        for (_, b) in pairs {
            chance += usize::from(a == b);
        }
    }
    let p_e = chance as f64 / (n * n);
    (p_e < 1.0).then(|| (p_o - p_e) / (1.0 - p_e))
}

fn brute_alpha(units: &[Vec<Option<u8>>]) -> Option<f64> {
    let pairable: Vec<Vec<u8>> = units
        .iter()
        .map(|u| u.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|v| v.len() >= 2)
        .collect();
    let slots: Vec<u8> = pairable.iter().flatten().copied().collect();
    let n = slots.len() as f64;
    if pairable.is_empty() {
        return None;
    }
    let mut d_o = 0.0;
    for v in &pairable {
        let mut dis = 0usize;
        for i in 0..v.len() {
            for j in 0..v.len() {
                dis += usize::from(i != j && v[i] != v[j]);
            }
        }
        d_o += dis as f64 / (v.len() - 1) as f64;
    }
    d_o /= n;
    let mut dis = 0usize;
    for i in 0..slots.len() {
        for j in 0..slots.len() {
            dis += usize::from(i != j && slots[i] != slots[j]);
        }
    }
    if dis == 0 {
        return None;
    }
    let d_e = dis as f64 / (n * (n - 1.0));
    Some(1.0 - d_o / d_e)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    for (observed, expected) in [(0.874, 0.748), (0.919, 0.838)] {
        let p = pabak(observed).map_err(|e| e.to_string())?;
        ensure(format!("{p:.3}") == format!("{expected:.3}"), || {
            format!("pabak({observed}) = {p}")
        })?;
        close(p, expected, 1e-12, "pabak")?;
    }
    let mut r = rng(1);
    let (mut kappas, mut alphas) = (0, 0);
    for _ in 0..2000 {
        let n = r.random_range(1..=10);
        let classes = r.random_range(2..=4u8);
        let pairs: Vec<(u8, u8)> = (0..n)
            .map(|_| (r.random_range(0..classes), r.random_range(0..classes)))
            .collect();
        let mut counts = vec![vec![0u64; classes as usize]; classes as usize];
        for &(a, b) in &pairs {
            counts[a as usize][b as usize] += 1;
        }
        let k = cohen_kappa(&ContingencyTable::new(counts).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        match brute_kappa(&pairs) {
            Some(want) => {
                close(k.kappa, want, 1e-9, "kappa")?;
                kappas += 1;
            }
            None => ensure(k.degenerate, || "degenerate kappa not flagged".into())?,
        }

        let coders = r.random_range(2..=4);
        let units: Vec<Vec<Option<u8>>> = (0..r.random_range(1..=10))
            .map(|_| {
                (0..coders)
                    .map(|_| r.random_bool(0.8).then(|| r.random_range(0..classes)))
                    .collect()
            })
            .collect();
        match (krippendorff_alpha(&units), brute_alpha(&units)) {
            (Ok(got), Some(want)) => {
                close(got, want, 1e-9, "alpha")?;
                alphas += 1;
            }
            (Err(_), None) => {}
            (got, want) => {
                return Err(format!(
                    "alpha definedness differs: {got:?} vs {want:?} on {units:?}"
                ))
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "pabak rows exact; {kappas} kappa and {alphas} alpha instances match in {elapsed:.0?}"
    ))
}

// 2. Distribution-weighted judge validation.

fn criterion_2() -> Outcome {
    let m = |accuracy, precision, recall, f1| JudgeMetrics {
        accuracy,
        precision,
        recall,
        f1,
    };
    let human_human = vec![
        (0.757, m(0.85, 1.00, 0.77, 0.87)),
        (0.243, m(0.80, 0.92, 0.80, 0.86)),
    ];
    let human_model = vec![
        (0.753, m(1.00, 1.00, 1.00, 1.00)),
        (0.210, m(0.70, 0.67, 0.50, 0.57)),
        (0.038, m(0.85, 0.92, 0.85, 0.88)),
    ];
    let mut lines = Vec::new();
    for (name, rows, want) in [
        ("human-human", human_human, [0.838, 0.981, 0.777, 0.868]),
        ("human-model", human_model, [0.932, 0.929, 0.890, 0.906]),
    ] {
        let got = distribution_weighted_rows(&rows, ROUNDED_WEIGHT_TOLERANCE * rows.len() as f64)
            .map_err(|e| e.to_string())?;
        for (v, w) in [got.accuracy, got.precision, got.recall, got.f1]
            .into_iter()
            .zip(want)
        {
            close(v, w, 0.001, name)?;
        }
        lines.push(format!(
            "{name} ({:.3}, {:.3}, {:.3}, {:.3})",
            got.accuracy, got.precision, got.recall, got.f1
        ));
    }
    Ok(lines.join("; "))
}

// 3. Threshold calibration.

fn criterion_3() -> Outcome {
    let human_human = [0.00, 0.00, 0.00, 0.00, 0.05, 0.65, 0.75];
    let human_model = [0.00, 0.00, 0.00, 0.05, 0.10, 0.40, 0.65];
    let mut got = Vec::new();
    for (rates, want) in [(human_human, 0.55), (human_model, 0.45)] {
        let table = StratumTable::default()
            .with_match_rates(&rates)
            .map_err(|e| e.to_string())?;
        let t = calibrate_threshold(&table, 0.1).map_err(|e| e.to_string())?;
        ensure(t == want, || format!("threshold {t}, expected {want}"))?;
        got.push(t);
    }
    Ok(format!("human-human {}, human-model {}", got[0], got[1]))
}

// 4. Worked consensus example through the CLI.

fn fixture_config(run_root: &Path) -> LoadedConfig {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/worked_example/config.json");
    LoadedConfig::load(
        Some(&path),
        &[format!("paths.run_root={}", run_root.display())],
    )
    .unwrap()
}

fn report_bytes(dir: &Path) -> Vec<Vec<u8>> {
    ["report.json", "report.csv", "report.md"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).unwrap())
        .collect()
}

fn criterion_4() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first =
        run(Command::ConsensusEval, &fixture_config(a.path())).map_err(|e| e.to_string())?;
    let line = std::fs::read_to_string(
        first
            .run_dir
            .join("artifacts/consensus-eval/consensus.jsonl"),
    )
    .unwrap();
    let consensus: ConsensusSet = serde_json::from_str(line.trim()).map_err(|e| e.to_string())?;
    let want: BTreeSet<UnitId> = ["h1", "h3", "h5"].into_iter().map(UnitId::from).collect();
    ensure(consensus.members == want, || {
        format!("consensus {:?}", consensus.members)
    })?;

    let table = first
        .report
        .sections
        .iter()
        .flat_map(|s| &s.tables)
        .find(|t| t.name == "consensus_match")
        .ok_or("no consensus_match table")?;
    let row = table
        .rows
        .iter()
        .find(|r| r[0] == Cell::text("sft"))
        .ok_or("no sft row")?;
    let metric = |i: usize| match row[i] {
        Cell::Metric(v) => Ok(v),
        ref other => Err(format!("column {i} holds {other:?}")),
    };
    let (p, r, f) = (metric(1)?, metric(2)?, metric(3)?);
    close(p, 0.250, 0.001, "precision")?;
    close(r, 0.667, 0.001, "recall")?;
    close(f, 0.364, 0.001, "F1")?;

    let before = report_bytes(&first.run_dir);
    run(Command::ConsensusEval, &fixture_config(a.path())).map_err(|e| e.to_string())?;
    ensure(report_bytes(&first.run_dir) == before, || {
        "rerun changed the report".into()
    })?;
    let other =
        run(Command::ConsensusEval, &fixture_config(b.path())).map_err(|e| e.to_string())?;
    ensure(report_bytes(&other.run_dir) == before, || {
        "fresh run directory differs".into()
    })?;
    Ok(format!(
        "consensus {{h1, h3, h5}}; P {p:.3} R {r:.3} F1 {f:.3}; report bytes stable"
    ))
}

// 5. Matching metrics against enumeration.

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    for instance in 0..1000 {
        let humans: Vec<UnitId> = (0..r.random_range(1..=8))
            .map(|i| UnitId(format!("h{i}")))
            .collect();
        let models: Vec<UnitId> = (0..r.random_range(1..=8))
            .map(|i| UnitId(format!("m{i}")))
            .collect();
        let mut members: BTreeSet<UnitId> = humans
            .iter()
            .filter(|_| r.random_bool(0.6))
            .cloned()
            .collect();
        if members.is_empty() {
            members.insert(humans[0].clone());
        }
        let mut edges = Vec::new();
        for h in &humans {
            for m in &models {
                if r.random_bool(0.5) {
                    edges.push(MatchEdge {
                        left_unit_id: h.clone(),
                        right_unit_id: m.clone(),
                        pair_type: PairType::HumanModel,
                        cosine: 0.5,
                        judged: Some(r.random_bool(0.4)),
                        explanation: None,
                    });
                }
            }
        }
        let consensus = ConsensusSet {
            paper_id: format!("p{instance}"),
            clusters: vec![members.clone()],
            members,
        };
        let got = score_model(&consensus, &models, &edges, Granularity::Item)
            .map_err(|e| e.to_string())?;

        let judged_match = |h: &UnitId, m: &UnitId| {
            edges
                .iter()
                .any(|e| &e.left_unit_id == h && &e.right_unit_id == m && e.judged == Some(true))
        };
        let matched_models: BTreeSet<UnitId> = models
            .iter()
            .filter(|m| consensus.members.iter().any(|h| judged_match(h, m)))
            .cloned()
            .collect();
        let matched_members: BTreeSet<UnitId> = consensus
            .members
            .iter()
            .filter(|h| models.iter().any(|m| judged_match(h, m)))
            .cloned()
            .collect();
        let p = matched_models.len() as f64 / models.len() as f64;
        let rec = matched_members.len() as f64 / consensus.members.len() as f64;
        let f1 = if p + rec == 0.0 {
            0.0
        } else {
            2.0 * p * rec / (p + rec)
        };
        ensure(
            got.matched_model_units == matched_models
                && got.matched_consensus_units == matched_members,
            || format!("instance {instance}: matched sets differ"),
        )?;
        ensure(got.precision == p && got.recall == rec, || {
            format!("instance {instance}: P/R differ")
        })?;
        close(got.f1, f1, 1e-12, &format!("instance {instance} F1"))?;
    }
    Ok("1000 random instances equal enumeration".into())
}

// 6. Bootstrap behaviour.

fn evaluated(id: String, success: bool) -> EvaluatedUnit {
    EvaluatedUnit {
        unit_id: UnitId(id.clone()),
        quality: QualityScores::uniform(5),
        prediction: PredictedResponse {
            unit_id: UnitId(id),
            predicted_validity: if success {
                Validity::Agreed
            } else {
                Validity::Rebutted
            },
            predicted_action: AuthorAction::WillRevise,
            predicted_response_text: None,
        },
    }
}

fn synthetic_papers(flags: &[Vec<bool>]) -> Vec<PaperEvaluation> {
    flags
        .iter()
        .enumerate()
        .map(|(p, f)| PaperEvaluation {
            paper_id: format!("p{p}"),
            units: f
                .iter()
                .enumerate()
                .map(|(i, s)| evaluated(format!("p{p}u{i}"), *s))
                .collect(),
        })
        .collect()
}

/// Expected pooled rate when each paper contributes a uniformly random k-subset.
fn subset_expectation(flags: &[Vec<bool>], k: usize) -> f64 {
    let (mut hits, mut drawn) = (0.0, 0usize);
    for f in flags {
        let n = f.len();
        let take = n.min(k);
        let mut subsets = 0usize;
        let mut total = 0usize;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == take {
                subsets += 1;
                total += (0..n).filter(|&i| mask >> i & 1 == 1 && f[i]).count();
            }
        }
        hits += total as f64 / subsets as f64;
        drawn += take;
    }
    hits / drawn as f64
}

fn criterion_6() -> Outcome {
    let options = SuccessOptions::default();
    let mut r = rng(6);
    let k = 5;

    let small: Vec<Vec<bool>> = (0..20)
        .map(|_| {
            (0..r.random_range(1..=k))
                .map(|_| r.random_bool(0.4))
                .collect()
        })
        .collect();
    let papers = synthetic_papers(&small);
    let cfg = BootstrapConfig {
        k,
        iterations: 300,
        seed: 3,
    };
    let got =
        bootstrap_eval(&papers, &cfg, &options, Exec::default()).map_err(|e| e.to_string())?;
    let full = success_rate(
        papers.iter().flat_map(|p| &p.units),
        SuccessMode::Combined,
        &options,
    )
    .map_err(|e| e.to_string())?;
    let c = got[&SuccessMode::Combined];
    ensure(c.half_width() == 0.0, || {
        format!("half-width {}", c.half_width())
    })?;
    close(c.point_estimate, full, 1e-12, "mean with at most k units")?;

    let match_papers: Vec<PaperMatchData> = (0..10)
        .map(|p| {
            let members: BTreeSet<UnitId> = (0..3).map(|i| UnitId(format!("p{p}h{i}"))).collect();
            let model: Vec<UnitId> = (0..r.random_range(1..=k))
                .map(|i| UnitId(format!("p{p}m{i}")))
                .collect();
            let edges = model
                .iter()
                .filter(|_| r.random_bool(0.5))
                .map(|m| MatchEdge {
                    left_unit_id: UnitId(format!("p{p}h0")),
                    right_unit_id: m.clone(),
                    pair_type: PairType::HumanModel,
                    cosine: 0.9,
                    judged: Some(true),
                    explanation: None,
                })
                .collect();
            PaperMatchData {
                consensus: ConsensusSet {
                    paper_id: format!("p{p}"),
                    clusters: vec![members.clone()],
                    members,
                },
                model_units: model,
                edges,
            }
        })
        .collect();
    let mcfg = MatchEvalConfig {
        k,
        iterations: 300,
        seed: 4,
        granularity: Granularity::Item,
        aggregation: Aggregation::Micro,
    };
    let mb = bootstrap_match(&match_papers, &mcfg, Exec::default()).map_err(|e| e.to_string())?;
    ensure(mb.f1.half_width() == 0.0, || {
        "match bootstrap has width with at most k units".into()
    })?;

    let wide: Vec<Vec<bool>> = (0..50)
        .map(|_| (0..12).map(|_| r.random_bool(0.3)).collect())
        .collect();
    let papers = synthetic_papers(&wide);
    let cfg = BootstrapConfig {
        k,
        iterations: 200,
        seed: 17,
    };
    let once =
        bootstrap_eval(&papers, &cfg, &options, Exec::Parallel).map_err(|e| e.to_string())?;
    let twice =
        bootstrap_eval(&papers, &cfg, &options, Exec::Sequential).map_err(|e| e.to_string())?;
    ensure(once == twice, || {
        "same seed gave different intervals".into()
    })?;
    ensure(once[&SuccessMode::Combined].half_width() > 0.0, || {
        "no spread with more than k units".into()
    })?;

    for trial in 0..50 {
        let flags: Vec<Vec<bool>> = (0..r.random_range(1..12))
            .map(|_| {
                (0..r.random_range(1..=6))
                    .map(|_| r.random_bool(0.5))
                    .collect()
            })
            .collect();
        let cfg = BootstrapConfig {
            k,
            iterations: 1200,
            seed: trial,
        };
        let got = bootstrap_eval(&synthetic_papers(&flags), &cfg, &options, Exec::default())
            .map_err(|e| e.to_string())?;
        close(
            got[&SuccessMode::Combined].point_estimate,
            subset_expectation(&flags, k),
            1e-12,
            "subset expectation",
        )?;
    }

    let big: Vec<Vec<bool>> = (0..1000)
        .map(|_| {
            (0..r.random_range(3..=12))
                .map(|_| r.random_bool(0.3))
                .collect()
        })
        .collect();
    let papers = synthetic_papers(&big);
    let start = Instant::now();
    bootstrap_eval(
        &papers,
        &BootstrapConfig {
            k,
            iterations: 1000,
            seed: 0,
        },
        &options,
        Exec::default(),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || {
        format!("1000 papers at B = 1000 took {elapsed:?}")
    })?;
    Ok(format!(
        "zero width at <= k units, deterministic, exact over 50 subset trials, 1000 papers x B=1000 in {elapsed:.2?}"
    ))
}

// 7. Preference data rules.

fn random_unit(r: &mut ChaCha8Rng, paper: &str, i: usize) -> FeedbackUnit {
    let validity = Validity::ALL[r.random_range(0..Validity::ALL.len())];
    let action = AuthorAction::ALL[r.random_range(0..AuthorAction::ALL.len())];
    FeedbackUnit::new(
        paper,
        Some(format!("r{}", i % 3)),
        Source::Human,
        format!("{paper} critique {i}"),
    )
    .with_labels(validity, action)
}

fn random_vector(r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..16).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// A small perturbation of `v`, usually above the dedup threshold.
fn near(r: &mut ChaCha8Rng, v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x + r.random_range(-0.3..0.3)).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn kept_by_rule(v: &CorruptionVariant) -> bool {
    match &v.verification {
        Some(ver) => {
            ver.predicted_dimension == v.dimension
                && ver.target_degradation >= 2
                && ver.collateral_preservation >= 2
        }
        None => false,
    }
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let (mut real, mut corrupted, mut filtered) = (0usize, 0usize, 0usize);
    for corpus in 0..40 {
        let mut vectors = TextVectors::default();
        let mut raw: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut papers = Vec::new();
        let mut bank = CorruptionBank::new();
        for p in 0..6 {
            let paper_id = format!("c{corpus}p{p}");
            let units: Vec<FeedbackUnit> = (0..r.random_range(2..=14))
                .map(|i| random_unit(&mut r, &paper_id, i))
                .collect();
            let mut previous: Option<Vec<f64>> = None;
            for u in &units {
                let v = match &previous {
                    Some(p) if r.random_bool(0.25) => near(&mut r, p),
                    _ => random_vector(&mut r),
                };
                previous = Some(v.clone());
                raw.insert(u.text.clone(), v.clone());
                vectors.insert(u.text.clone(), v);
                if u.is_successful() {
                    let variants: Vec<CorruptionVariant> = CorruptionDimension::ALL
                        .iter()
                        .map(|&d| CorruptionVariant {
                            source_unit_id: u.id.clone(),
                            dimension: d,
                            text: format!("{} / {}", u.text, d.as_str()),
                            verification: r.random_bool(0.9).then(|| Verification {
                                predicted_dimension: CorruptionDimension::ALL[r.random_range(0..5)],
                                target_degradation: r.random_range(1..=3),
                                collateral_preservation: r.random_range(1..=3),
                                reasoning: None,
                            }),
                        })
                        .collect();
                    let kept = apply_filter(&variants);
                    let by_rule: Vec<CorruptionVariant> = variants
                        .iter()
                        .filter(|v| kept_by_rule(v))
                        .cloned()
                        .collect();
                    ensure(kept == by_rule, || {
                        format!("filter disagrees for unit {}", u.id)
                    })?;
                    filtered += variants.len();
                    for v in &variants {
                        let vec = if r.random_bool(0.3) {
                            near(&mut r, &raw[&u.text])
                        } else {
                            random_vector(&mut r)
                        };
                        raw.insert(v.text.clone(), vec.clone());
                        vectors.insert(v.text.clone(), vec);
                    }
                    bank.insert(u.id.clone(), kept);
                }
            }
            papers.push(PaperRecord {
                paper_id,
                title: "t".into(),
                abstract_text: "a".into(),
                body_markdown: "b".into(),
                venue_year: 2024,
                decision: fbeval_core::domain::Decision::Accepted,
                threads: Vec::new(),
                units,
            });
        }
        let cfg = DpoConfig {
            seed: corpus,
            real_pairs_per_paper: 2,
            ..DpoConfig::default()
        };
        let out = build_dpo_pairs(&papers, &bank, &vectors, &cfg, Exec::default())
            .map_err(|e| e.to_string())?;
        let by_id: BTreeMap<&str, &FeedbackUnit> = papers
            .iter()
            .flat_map(|p| &p.units)
            .map(|u| (u.id.as_str(), u))
            .collect();
        let successes = |ids: &[String]| {
            ids.iter()
                .filter(|id| {
                    by_id.get(id.as_str()).is_some_and(|u| {
                        u.validity == Some(Validity::Agreed)
                            && matches!(
                                u.action,
                                Some(AuthorAction::WillRevise | AuthorAction::DeferFutureWork)
                            )
                    })
                })
                .count()
        };
        for pair in &out.pairs {
            if pair.pair_kind == PairKind::RealLabel {
                let (c, rj) = (successes(&pair.chosen_ids), successes(&pair.rejected_ids));
                ensure(c >= rj + 2, || {
                    format!("{}: real pair delta {c} - {rj}", pair.paper_id)
                })?;
                real += 1;
            } else {
                let dim = pair
                    .corrupted_dimension
                    .ok_or("corruption pair without dimension")?;
                let swapped = pair
                    .rejected_ids
                    .iter()
                    .find(|id| id.contains('#'))
                    .ok_or("no corrupted item")?;
                let source = swapped.split('#').next().unwrap();
                let variant = bank[&UnitId::from(source)]
                    .iter()
                    .find(|v| v.dimension == dim)
                    .ok_or("emitted variant not in the kept set")?;
                ensure(kept_by_rule(variant), || {
                    "emitted a variant the rule rejects".into()
                })?;
                corrupted += 1;
            }
            for set in [&pair.chosen, &pair.rejected] {
                for i in 0..set.len() {
                    for j in i + 1..set.len() {
                        let c = cos(&raw[&set[i]], &raw[&set[j]]);
                        ensure(c <= 0.5, || {
                            format!("{}: intra-set cosine {c}", pair.paper_id)
                        })?;
                    }
                }
            }
        }
    }
    ensure(real > 0 && corrupted > 0, || {
        format!("degenerate corpora: {real} real, {corrupted} corruption")
    })?;
    Ok(format!("{real} real-label and {corrupted} corruption pairs checked; {filtered} variants re-filtered"))
}

// 8. Exact tests.

fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn fisher_oracle(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let weight = |x: u64| choose(r1, x) * choose(r2, c1 - x);
    let observed = weight(a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let extreme: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    extreme as f64 / choose(r1 + r2, c1) as f64
}

fn oracle_midranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let below = values.iter().filter(|w| *w < v).count() as f64;
            let equal = values.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn mann_whitney_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = oracle_midranks(&pooled);
    let (n1, n) = (x.len(), pooled.len());
    let shift = (n1 * (n1 + 1)) as f64 / 2.0;
    let centre = (n1 * y.len()) as f64 / 2.0;
    let u_of = |mask: u32| {
        (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum::<f64>()
            - shift
    };
    let observed = u_of((1u32 << n1) - 1);
    let (mut total, mut extreme) = (0usize, 0usize);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == n1 {
            total += 1;
            if (u_of(mask) - centre).abs() >= (observed - centre).abs() - 1e-9 {
                extreme += 1;
            }
        }
    }
    (observed, extreme as f64 / total as f64)
}

fn criterion_8() -> Outcome {
    let mut tables = 0;
    for a in 0..=12u64 {
        for b in 0..=12 - a {
            for c in 0..=12 - a - b {
                for d in 0..=12 - a - b - c {
                    if a + b + c + d == 0 {
                        continue;
                    }
                    let t = ContingencyTable::new(vec![vec![a, b], vec![c, d]])
                        .map_err(|e| e.to_string())?;
                    let p = fisher_exact(&t).map_err(|e| format!("[[{a},{b}],[{c},{d}]]: {e}"))?;
                    close(
                        p,
                        fisher_oracle(a, b, c, d),
                        1e-9,
                        &format!("fisher [[{a},{b}],[{c},{d}]]"),
                    )?;
                    tables += 1;
                }
            }
        }
    }

    let mut r = rng(8);
    let mut samples = 0;
    for _ in 0..300 {
        let (n1, n2) = (r.random_range(1..=8), r.random_range(1..=8));
        let levels = r.random_range(2..=10);
        let x: Vec<f64> = (0..n1).map(|_| r.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n2).map(|_| r.random_range(0..levels) as f64).collect();
        let got = mann_whitney_u(&x, &y).map_err(|e| e.to_string())?;
        let (u, p) = mann_whitney_oracle(&x, &y);
        close(got.u, u, 1e-9, "U")?;
        close(got.p_value, p, 1e-9, &format!("exact p for {x:?} vs {y:?}"))?;
        samples += 1;
    }
    let x: Vec<f64> = (0..10).map(|i| (i % 4) as f64).collect();
    let y: Vec<f64> = (0..10).map(|i| ((i * 3) % 7) as f64).collect();
    let got = mann_whitney_u(&x, &y).map_err(|e| e.to_string())?;
    let (u, p) = mann_whitney_oracle(&x, &y);
    close(got.u, u, 1e-9, "U 10x10")?;
    close(got.p_value, p, 1e-9, "p 10x10")?;

    for n in [1usize, 3, 7, 20] {
        let x: Vec<f64> = (0..n).map(|i| (i % 5) as f64).collect();
        let got = mann_whitney_u(&x, &x).map_err(|e| e.to_string())?;
        close(got.u, (n * n) as f64 / 2.0, 1e-12, "U of identical samples")?;
        close(got.p_value, 1.0, 1e-9, "p of identical samples")?;
    }
    Ok(format!(
        "{tables} Fisher tables and {samples} + 1 Mann-Whitney samples match enumeration"
    ))
}

// 9. Success-rate algebra.

fn criterion_9() -> Outcome {
    let mut cases = 0;
    for v in Validity::ALL {
        for a in AuthorAction::ALL {
            let want = v == Validity::Agreed
                && matches!(a, AuthorAction::WillRevise | AuthorAction::DeferFutureWork);
            ensure(success_indicator(v, a) == want, || {
                format!("success_indicator({v:?}, {a:?})")
            })?;
            cases += 1;
        }
    }
    ensure(cases == 21, || format!("{cases} cases"))?;

    let mut r = rng(9);
    for filter_all_modes in [true, false] {
        let options = SuccessOptions {
            filter_all_modes,
            ..SuccessOptions::default()
        };
        for _ in 0..500 {
            let units: Vec<EvaluatedUnit> = (0..r.random_range(1..=30))
                .map(|i| {
                    let mut u = evaluated(format!("u{i}"), false);
                    u.quality = QualityScores::uniform(r.random_range(1..=5));
                    u.prediction.predicted_validity = Validity::ALL[r.random_range(0..3)];
                    u.prediction.predicted_action = AuthorAction::ALL[r.random_range(0..7)];
                    u
                })
                .collect();
            let rate = |m| success_rate(&units, m, &options).map_err(|e| e.to_string());
            let (c, v, a) = (
                rate(SuccessMode::Combined)?,
                rate(SuccessMode::ValidityOnly)?,
                rate(SuccessMode::ActionOnly)?,
            );
            ensure(c <= v.min(a) + 1e-15, || {
                format!("combined {c} above min({v}, {a})")
            })?;
        }
    }
    Ok("21 indicator cases; combined <= min over 1000 fuzzed sets".into())
}

// 10. Hermeticity.

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/worked_example/config.json");
    let unreachable = "http://127.0.0.1:9";
    let base = |extra: &[&str], cmd: &str| {
        let mut p = std::process::Command::new(env!("CARGO_BIN_EXE_fbeval"));
        p.env_clear()
            .env("HTTP_PROXY", unreachable)
            .env("HTTPS_PROXY", unreachable)
            .env("ALL_PROXY", unreachable)
            .arg("--config")
            .arg(&config)
            .arg("--set")
            .arg(format!("paths.run_root={}", tmp.path().display()));
        for e in extra {
            p.args(["--set", e]);
        }
        p.arg(cmd);
        p.output().unwrap()
    };
    for cmd in ["consensus-eval", "success-eval", "report"] {
        let out = base(&[], cmd);
        ensure(out.status.success(), || {
            format!(
                "{cmd} failed without keys: {}",
                String::from_utf8_lossy(&out.stderr)
            )
        })?;
    }
    let live = base(&["mode=\"live\""], "consensus-eval");
    ensure(live.status.code() == Some(EXIT_CONFIG), || {
        "live mode without keys did not stop at validation".into()
    })?;
    Ok("stub commands ran with an empty environment and unreachable proxies; live mode stopped at validation".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("agreement statistics", criterion_1),
        ("distribution-weighted judge validation", criterion_2),
        ("threshold calibration", criterion_3),
        ("worked consensus example end to end", criterion_4),
        ("match metrics equal enumeration", criterion_5),
        ("bootstrap", criterion_6),
        ("preference data rules", criterion_7),
        ("exact significance tests", criterion_8),
        ("success-rate algebra", criterion_9),
        ("hermetic test suite", criterion_10),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

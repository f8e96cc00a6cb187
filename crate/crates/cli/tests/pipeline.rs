use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use fbeval_cli::{
    render_report, rerender, run, CliError, Command, Format, LoadedConfig, EXIT_CONFIG,
    EXIT_JUDGE_FORMAT,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn load(name: &str, run_root: &Path, extra: &[&str]) -> LoadedConfig {
    let mut sets = vec![format!("paths.run_root={}", run_root.display())];
    sets.extend(extra.iter().map(|s| s.to_string()));
    LoadedConfig::load(Some(&fixture(name).join("config.json")), &sets).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn markdown(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("report.md")).unwrap()
}

#[test]
fn worked_example_scores_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load("worked_example", tmp.path(), &[]);
    let out = run(Command::ConsensusEval, &cfg).unwrap();
    let md = markdown(&out.run_dir);
    assert!(
        md.contains("| sft    | 0.250 | 0.667 | 0.364 | 0.000 | 0.000 | 0.000 | 1      |"),
        "{md}"
    );
    assert!(md.contains("| base   | 0.500 | 0.333 | 0.400 |"), "{md}");

    let consensus =
        std::fs::read_to_string(out.run_dir.join("artifacts/consensus-eval/consensus.jsonl"))
            .unwrap();
    let set: serde_json::Value = serde_json::from_str(consensus.lines().next().unwrap()).unwrap();
    assert_eq!(set["members"], serde_json::json!(["h1", "h3", "h5"]));
}

#[test]
fn cluster_granularity_counts_the_whole_cluster() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load(
        "worked_example",
        tmp.path(),
        &["consensus.granularity=\"cluster\""],
    );
    let out = run(Command::ConsensusEval, &cfg).unwrap();
    assert!(markdown(&out.run_dir).contains("| sft    | 0.250 | 1.000 | 0.400 |"));
}

#[test]
fn decomposition_appears_once_both_evaluations_ran() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load("worked_example", tmp.path(), &[]);
    let first = run(Command::ConsensusEval, &cfg).unwrap();
    assert!(!markdown(&first.run_dir).contains("## aligned-novel"));
    let out = run(Command::SuccessEval, &cfg).unwrap();
    let md = markdown(&out.run_dir);
    assert!(md.contains("| sft    | 4     | 25.0    | 75.0  |"), "{md}");
    assert!(
        md.contains("| sft    | add_ablations                 | 1     | 25.0    | 0.0   | -50.0%"),
        "{md}"
    );
    assert!(md.contains("| sft    | 100.0    | 0.0 |"), "{md}");
}

#[test]
fn stub_reruns_reproduce_every_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load("worked_example", tmp.path(), &[]);
    run(Command::ConsensusEval, &cfg).unwrap();
    let out = run(Command::SuccessEval, &cfg).unwrap();
    let before = snapshot(&out.run_dir);
    run(Command::ConsensusEval, &cfg).unwrap();
    run(Command::SuccessEval, &cfg).unwrap();
    assert_eq!(snapshot(&out.run_dir), before);

    let again = rerender(&out.run_dir).unwrap();
    assert_eq!(snapshot(&out.run_dir), before);
    for f in Format::ALL {
        let on_disk =
            std::fs::read_to_string(out.run_dir.join(format!("report.{}", f.extension()))).unwrap();
        assert_eq!(render_report(&again.report, f), on_disk);
    }
}

#[test]
fn sequential_execution_writes_the_same_run() {
    let par_root = tempfile::tempdir().unwrap();
    let seq_root = tempfile::tempdir().unwrap();
    let par = run(
        Command::ConsensusEval,
        &load("worked_example", par_root.path(), &[]),
    )
    .unwrap();
    let seq = run(
        Command::ConsensusEval,
        &load("worked_example", seq_root.path(), &["parallel=false"]),
    )
    .unwrap();
    assert_eq!(par.run_dir.file_name(), seq.run_dir.file_name());
    let mut a = snapshot(&par.run_dir);
    let mut b = snapshot(&seq.run_dir);
    // The recorded config keeps the flag as given.
    a.remove(Path::new("config.json"));
    b.remove(Path::new("config.json"));
    assert_eq!(a, b);
}

#[test]
fn a_different_seed_gets_its_own_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(
        Command::ConsensusEval,
        &load("worked_example", tmp.path(), &[]),
    )
    .unwrap();
    let b = run(
        Command::ConsensusEval,
        &load("worked_example", tmp.path(), &["sampling.seed=9"]),
    )
    .unwrap();
    assert_ne!(a.run_dir, b.run_dir);
}

#[test]
fn pipeline_commands_chain_through_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load("pipeline", tmp.path(), &[]);
    for c in [
        Command::Ingest,
        Command::Parse,
        Command::ForgeSft,
        Command::ForgeDpo,
        Command::Calibrate,
    ] {
        run(c, &cfg).unwrap_or_else(|e| panic!("{}: {e}", c.name()));
    }
    let out = run(Command::Report, &cfg).unwrap();
    let md = markdown(&out.run_dir);
    assert!(
        md.contains("| test  | 4      | 2        | 2        | 0       |"),
        "{md}"
    );
    assert!(
        md.contains("| train | 6      | 30    | 18         | 0.600        |"),
        "{md}"
    );
    assert!(md.contains("| human_human | 0.550     |"), "{md}");
    assert!(md.contains("| human_model | 0.450     |"), "{md}");
    let dpo =
        std::fs::read_to_string(out.run_dir.join("artifacts/forge-dpo/dpo_train.jsonl")).unwrap();
    assert!(dpo.lines().count() > 0);
    let sft =
        std::fs::read_to_string(out.run_dir.join("artifacts/forge-sft/sft_train.jsonl")).unwrap();
    assert_eq!(sft.lines().count(), 12);
}

#[test]
fn parse_before_ingest_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run(Command::Parse, &load("pipeline", tmp.path(), &[])).unwrap_err();
    assert!(matches!(err, CliError::Input { .. }), "{err}");
}

#[test]
fn missing_required_paths_fail_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load("pipeline", tmp.path(), &["paths.calibration=null"]);
    let err = run(Command::Calibrate, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
    assert!(err.to_string().contains("paths.calibration is required"));
}

#[test]
fn malformed_judge_output_maps_to_its_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let stub = tmp.path().join("bad_stub.json");
    std::fs::write(
        &stub,
        r#"{"responses": [{"template": "match_feedback", "key": "*", "response": {"match": "maybe"}}],
            "embedding_dimension": 4}"#,
    )
    .unwrap();
    let cfg = load(
        "worked_example",
        tmp.path(),
        &[&format!("paths.stub_fixtures={}", stub.display())],
    );
    let err = run(Command::ConsensusEval, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_JUDGE_FORMAT, "{err}");
    assert!(err.to_string().contains("paper P"), "{err}");
}

fn binary() -> Process {
    Process::new(env!("CARGO_BIN_EXE_fbeval"))
}

#[test]
fn live_mode_without_bindings_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = binary()
        .arg("--config")
        .arg(fixture("worked_example").join("config.json"))
        .args(["--set", "mode=\"live\"", "--set"])
        .arg(format!("paths.run_root={}", tmp.path().display()))
        .arg("consensus-eval")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("`match` has no endpoint"), "{stderr}");
    assert!(stderr.contains("`embed` has no endpoint"), "{stderr}");
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn binary_prints_the_run_directory_and_renders_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let base = |cmd: &str| {
        let mut p = binary();
        p.arg("--config")
            .arg(fixture("worked_example").join("config.json"))
            .arg("--set")
            .arg(format!("paths.run_root={}", tmp.path().display()))
            .arg(cmd);
        p
    };
    let out = base("consensus-eval").output().unwrap();
    assert!(out.status.success());
    let run_dir = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    assert!(run_dir.join("report.md").is_file());

    let csv = binary()
        .args(["report", "--format", "csv", "--run-dir"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(csv.status.success());
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(
        csv,
        std::fs::read_to_string(run_dir.join("report.csv")).unwrap()
    );
    assert!(csv.starts_with("table,row,column,value\n"));
}

use std::path::Path;
use std::process::{Command, Output};

use searchlab::config::NasSpace;
use searchlab::RunLog;

const TINY: &[&str] = &["--lines", "300", "--seq-len", "32", "--steps", "10"];

fn searchlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_searchlab")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = searchlab(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(TINY).copied().collect()
}

#[test]
fn fixed_default_writes_baseline_only_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &with_tiny(&["run", "fixed_default", "--track", "smiles_like", "--seed", "1", "--out", "f.jsonl"]));
    assert!(stdout.contains("best val_bpb"));
    let log = RunLog::load(&dir.path().join("f.jsonl")).unwrap();
    assert!(log.records.is_empty());
    assert!(log.header.baseline_val_bpb.is_some());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["settings"]["condition"], "fixed_default");
    assert_eq!(manifest["settings"]["budget"]["steps"], 10);
}

#[test]
fn random_nas_stays_in_the_space() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_tiny(&["run", "random_nas", "--n", "4", "--seed", "2", "--out", "r.jsonl"]));
    let log = RunLog::load(&dir.path().join("r.jsonl")).unwrap();
    assert_eq!(log.records.len(), 4);
    let space = NasSpace::desk();
    for r in &log.records {
        let a = &r.arch_after;
        assert!((space.depth_min..=space.depth_max).contains(&a.depth));
        assert!(space.widths.contains(&a.width));
    }
}

#[test]
fn scripted_agent_replays_deterministically_and_analyze_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let script = r#"[
        {"edits": [{"field": "depth", "old_value": 2, "new_value": 1}], "rationale": "shallower"},
        {"edits": [{"field": "weight_decay", "old_value": 0.2, "new_value": 0.3}], "rationale": "more decay"}
    ]"#;
    std::fs::write(dir.path().join("script.json"), script).unwrap();
    for out in ["a.jsonl", "b.jsonl"] {
        ok(dir.path(), &with_tiny(&["run", "agent", "--proposer", "scripted:script.json", "--n", "3", "--out", out]));
    }
    let strip = |p: &str| {
        let log = RunLog::load(&dir.path().join(p)).unwrap();
        log.records.iter().map(|r| (r.val_bpb, r.kept, r.mutation.clone())).collect::<Vec<_>>()
    };
    assert_eq!(strip("a.jsonl"), strip("b.jsonl"));
    assert_eq!(strip("a.jsonl").len(), 3);

    ok(dir.path(), &["run", "fixed_default", "--out", "f.jsonl", "--lines", "300", "--seq-len", "32", "--steps", "10"]);
    let analyze = ["analyze", "*.jsonl", "--out", "rep", "--resamples", "200", "--n-perm", "50"];
    let first = searchlab(dir.path(), &analyze);
    assert!(first.status.success());
    assert!(String::from_utf8_lossy(&first.stderr).contains("insufficient-n"));
    let snapshot = |d: &str| {
        let mut files: Vec<(String, String)> = Vec::new();
        for sub in ["", "tables", "figures"] {
            for e in std::fs::read_dir(dir.path().join(d).join(sub)).unwrap() {
                let p = e.unwrap().path();
                if p.is_file() {
                    files.push((p.display().to_string(), std::fs::read_to_string(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    let before = snapshot("rep");
    assert!(before.iter().any(|(p, _)| p.ends_with("best_so_far_smiles_like.svg")));
    assert!(before.iter().any(|(p, _)| p.ends_with("report.md")));
    ok(dir.path(), &analyze);
    assert_eq!(before, snapshot("rep"));
}

#[test]
fn analyze_fixture_table_reproduces_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/reference_runs.csv");
    ok(dir.path(), &["analyze", "--table", fixture.to_str().unwrap(), "--out", "rep", "--resamples", "500", "--n-perm", "10"]);
    let csv = std::fs::read_to_string(dir.path().join("rep/tables/decomposition.csv")).unwrap();
    let protein = csv.lines().find(|l| l.starts_with("protein_like")).unwrap();
    let hp: f64 = protein.split(',').nth(2).unwrap().parse().unwrap();
    assert!((hp - 6.0).abs() < 1.0, "{protein}");
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!searchlab(dir.path(), &["run", "agent", "--bogus-flag"]).status.success());
    assert!(!searchlab(dir.path(), &["run", "nonsense"]).status.success());
    assert!(!searchlab(dir.path(), &["analyze", "missing-*.jsonl"]).status.success());
    // llm proposer without endpoint configuration
    let out = Command::new(env!("CARGO_BIN_EXE_searchlab"))
        .current_dir(dir.path())
        .args(["run", "agent", "--proposer", "llm:some-model", "--n", "1"])
        .env_remove("SEARCHLAB_LLM_ENDPOINT")
        .env_remove("SEARCHLAB_LLM_KEY")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn transfer_and_innovation_wrappers() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_tiny(&["transfer", "--tracks", "smiles_like,protein_like", "--parallel", "2", "--out", "t.csv"]));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[0] == f[1] {
            assert_eq!(f[4], "0.0");
        }
    }

    let script = r#"[{"edits": [{"field": "depth", "old_value": 2, "new_value": 1}], "rationale": "shallower"}]"#;
    std::fs::write(dir.path().join("s.json"), script).unwrap();
    ok(dir.path(), &with_tiny(&["run", "agent", "--proposer", "scripted:s.json", "--n", "1", "--out", "a.jsonl"]));
    let out = ok(dir.path(), &with_tiny(&["innovations", "a.jsonl", "--tracks", "smiles_like,protein_like", "--out", "i.csv"]));
    assert!(out.contains("binomial p"), "{out}");

    let out = ok(dir.path(), &with_tiny(&["freeze", "--source", "smiles_like", "--target", "protein_like", "--out", "fr.csv"]));
    assert!(out.contains("frozen 2"));
    let out = ok(dir.path(), &with_tiny(&["lengthmatch", "--target", "protein_like", "--out", "lm.csv"]));
    assert!(out.contains("len 32: +0.00%"), "{out}");
}

#[test]
fn sample_nas_and_gen_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["sample-nas", "--n", "5", "--seed", "3"]);
    assert_eq!(out.lines().count(), 5);
    for l in out.lines() {
        let a: searchlab::ArchConfig = serde_json::from_str(l).unwrap();
        assert!((128..=512).contains(&a.width) && a.width % 32 == 0);
    }
    ok(dir.path(), &["gen-corpus", "--track", "protein_like", "--lines", "50", "--out", "c/p.txt"]);
    assert_eq!(std::fs::read_to_string(dir.path().join("c/p.txt")).unwrap().lines().count(), 50);
}

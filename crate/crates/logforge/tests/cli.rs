mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use common::{run_cli, synthetic_workspace, Workspace};
use logforge::cli::Exit;
use logforge::dataset::{read_jsonl, EvalExample, QuarantineEntry};
use logforge::gateway::{CassetteEntry, CassetteTransport, ScriptedReply};
use logforge::ingest::ingest_labeled_templates;
use logforge_core::instruct::PromptTemplate;
use logforge_core::Capability;
use tempfile::{tempdir, TempDir};

fn setup() -> (TempDir, Workspace) {
    let dir = tempdir().unwrap();
    let ws = synthetic_workspace(dir.path());
    (dir, ws)
}

fn cli(ws: &Workspace, args: &[&str]) -> (Exit, String, String) {
    let config = ws.config.to_str().unwrap().to_string();
    let mut full = vec!["--config", config.as_str()];
    full.extend_from_slice(args);
    run_cli(&full)
}

fn path_arg(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn decompose_and_build(ws: &Workspace) {
    let cassette = path_arg(&ws.root.join("decompose.cassette.json"));
    let (exit, _, err) = cli(ws, &["decompose", "--mock", &cassette]);
    assert_eq!(exit, Exit::Ok, "{err}");
    let (exit, _, err) = cli(ws, &["build"]);
    assert_eq!(exit, Exit::Ok, "{err}");
}

fn listing(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p.clone());
            }
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Replies for every held-out prompt of the selected capabilities, plus one
/// per labelled template for session queries. The first `drop` HDFS examples
/// get no reply.
fn eval_cassette(ws: &Workspace, capabilities: &[Capability], drop: usize) -> PathBuf {
    let test: Vec<EvalExample> = read_jsonl(&ws.root.join("dataset/test.jsonl")).unwrap();
    let dropped: Vec<&str> = test
        .iter()
        .filter(|e| e.domain == "HDFS")
        .take(drop)
        .map(|e| e.id.as_str())
        .collect();
    let mut replies: BTreeMap<String, String> = test
        .iter()
        .filter(|e| capabilities.contains(&e.capability) && !dropped.contains(&e.id.as_str()))
        .map(|e| (e.prompt(), e.reference.clone()))
        .collect();
    if capabilities.contains(&Capability::Anomaly) {
        let template = PromptTemplate::default_anomaly();
        for (domain, file) in [
            ("BGL", "bgl_templates.csv"),
            ("Spirit", "spirit_templates.csv"),
        ] {
            let (items, _) =
                ingest_labeled_templates(&ws.root.join("data").join(file), domain).unwrap();
            for t in items {
                replies.insert(template.render(&t.template), t.label.as_str().to_string());
            }
        }
    }
    let entries: Vec<CassetteEntry> = replies
        .into_iter()
        .map(|(p, r)| CassetteEntry::for_prompt(p, vec![ScriptedReply::ok(r)]))
        .collect();
    let path = ws.root.join(format!("eval-{drop}.cassette.json"));
    CassetteTransport::save(&entries, &path).unwrap();
    path
}

#[test]
fn dry_run_writes_nothing() {
    let (_dir, ws) = setup();
    let before = listing(&ws.root);
    let cassette = path_arg(&ws.root.join("decompose.cassette.json"));
    for args in [
        vec!["--dry-run", "ingest"],
        vec!["--dry-run", "decompose", "--mock", cassette.as_str()],
        vec!["--dry-run", "baseline"],
    ] {
        let (exit, out, err) = cli(&ws, &args);
        assert_eq!(exit, Exit::Ok, "{args:?}: {err}");
        assert!(out.starts_with("dry run: nothing written\n"), "{out}");
    }
    assert_eq!(listing(&ws.root), before);

    decompose_and_build(&ws);
    let before = listing(&ws.root);
    let (exit, out, _) = cli(&ws, &["--dry-run", "build"]);
    assert_eq!(exit, Exit::Ok);
    assert!(out.contains("seed 42"));
    let (exit, out, _) = cli(&ws, &["--dry-run", "eval", "--capability", "parsing"]);
    assert_eq!(exit, Exit::Ok);
    assert!(out.contains("parsing HDFS: 1800 examples"), "{out}");
    assert_eq!(listing(&ws.root), before);
}

#[test]
fn eval_without_a_dataset_points_at_build() {
    let (_dir, ws) = setup();
    let (exit, _, err) = cli(&ws, &["eval", "--capability", "parsing"]);
    assert_eq!(exit, Exit::Config);
    assert_eq!(exit.code(), 2);
    assert!(err.contains("logforge build"), "{err}");
}

#[test]
fn missing_source_is_a_config_error() {
    let (_dir, ws) = setup();
    // The decomposed triples do not exist until `decompose` has run.
    let (exit, _, err) = cli(&ws, &["build"]);
    assert_eq!(exit.code(), 2);
    assert!(err.contains("decomposed"), "{err}");

    fs::remove_file(ws.root.join("data/HDFS_2k.log_structured.csv")).unwrap();
    let (exit, _, err) = cli(&ws, &["baseline", "--domain", "HDFS"]);
    assert_eq!(exit.code(), 2);
    assert!(err.contains("sources.parsing.HDFS"), "{err}");

    let (exit, _, _) = run_cli(&["--config", "/nonexistent/logforge.toml", "build"]);
    assert_eq!(exit.code(), 2);
}

#[test]
fn decompose_then_build_counts() {
    let (_dir, ws) = setup();
    let cassette = path_arg(&ws.root.join("decompose.cassette.json"));
    let (exit, out, _) = cli(&ws, &["decompose", "--mock", &cassette]);
    assert_eq!(exit, Exit::Ok);
    assert!(
        out.contains("384 cases decomposed, 1152 triples, 0 quarantined"),
        "{out}"
    );

    let (exit, out, _) = cli(&ws, &["build"]);
    assert_eq!(exit, Exit::Ok);
    assert!(out.contains("total 2632 pairs"), "{out}");
    for c in ["interpretation", "root_cause", "solution"] {
        assert!(
            out.contains(&format!("{c}: 8 removed in calibration")),
            "{out}"
        );
    }
    let first = fs::read(ws.root.join("dataset/train.jsonl")).unwrap();
    let (exit, _, _) = cli(&ws, &["build"]);
    assert_eq!(exit, Exit::Ok);
    assert_eq!(
        fs::read(ws.root.join("dataset/train.jsonl")).unwrap(),
        first
    );
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 2632);
}

#[test]
fn malformed_decomposition_is_quarantined() {
    let (_dir, ws) = setup();
    let mut entries = common::decomposition_cassette(&ws.cases);
    entries[10].replies = vec![ScriptedReply::ok("I am unable to split this case.")];
    let path = ws.root.join("broken.cassette.json");
    CassetteTransport::save(&entries, &path).unwrap();
    let (exit, out, err) = cli(&ws, &["decompose", "--mock", &path_arg(&path)]);
    assert_eq!(exit, Exit::Ok);
    assert!(
        out.contains("383 cases decomposed, 1149 triples, 1 quarantined"),
        "{out}"
    );
    assert!(err.contains("quarantined so-0011"), "{err}");
    let q: Vec<QuarantineEntry> = read_jsonl(&ws.root.join("decomposed/quarantine.jsonl")).unwrap();
    assert_eq!(q.len(), 1);
    assert_eq!(q[0].case_id, "so-0011");
}

#[test]
fn mock_parsing_eval_is_deterministic() {
    let (_dir, ws) = setup();
    decompose_and_build(&ws);
    let cassette = path_arg(&eval_cassette(&ws, &[Capability::Parsing], 0));
    let args = [
        "eval",
        "--capability",
        "parsing",
        "--domain",
        "HDFS",
        "--mock",
        cassette.as_str(),
    ];
    let (exit, out, err) = cli(&ws, &args);
    assert_eq!(exit, Exit::Ok, "{err}");
    assert!(
        out.contains("parsing HDFS: f1 1.000, ri 1.000 (1800 examples)"),
        "{out}"
    );
    let examples = ws.root.join("eval/runs/parsing-HDFS-loglm/examples.jsonl");
    let report = ws.root.join("eval/reports/parsing.md");
    let first = (fs::read(&examples).unwrap(), fs::read(&report).unwrap());
    let (exit, _, _) = cli(&ws, &args);
    assert_eq!(exit, Exit::Ok);
    assert_eq!(
        (fs::read(&examples).unwrap(), fs::read(&report).unwrap()),
        first
    );

    let (exit, out, _) = cli(&ws, &["report", "--capability", "parsing"]);
    assert_eq!(exit, Exit::Ok);
    assert_eq!(out.as_bytes(), &first.1[..]);
    let (exit, out, _) = cli(&ws, &["report", "--format", "json"]);
    assert_eq!(exit, Exit::Ok);
    assert!(serde_json::from_str::<serde_json::Value>(&out).is_ok());
}

#[test]
fn partial_and_exhausted_exit_codes() {
    let (_dir, ws) = setup();
    decompose_and_build(&ws);
    let partial = path_arg(&eval_cassette(&ws, &[Capability::Parsing], 3));
    let (exit, _, err) = cli(
        &ws,
        &[
            "eval",
            "--capability",
            "parsing",
            "--domain",
            "HDFS",
            "--mock",
            &partial,
        ],
    );
    assert_eq!(exit, Exit::Partial);
    assert!(err.contains("3 examples without a reply"), "{err}");

    let empty = ws.root.join("empty.cassette.json");
    CassetteTransport::save(&[], &empty).unwrap();
    let (exit, _, _) = cli(
        &ws,
        &[
            "eval",
            "--capability",
            "solution",
            "--mock",
            &path_arg(&empty),
        ],
    );
    assert_eq!(exit.code(), 4);
}

#[test]
fn session_level_eval_reports_both_f1s() {
    let (_dir, ws) = setup();
    decompose_and_build(&ws);
    let cassette = path_arg(&eval_cassette(&ws, &[Capability::Anomaly], 0));
    let (exit, out, err) = cli(
        &ws,
        &[
            "eval",
            "--capability",
            "anomaly",
            "--level",
            "session",
            "--mock",
            &cassette,
        ],
    );
    assert_eq!(exit, Exit::Ok, "{err}");
    assert!(out.contains("anomaly BGL: s_f1 1.000, t_f1 1.000"), "{out}");
    let report = fs::read_to_string(ws.root.join("eval/reports/anomaly.md")).unwrap();
    assert!(report.contains("| Domain | T-F1 | S-F1 |"), "{report}");
    assert!(report.contains("| BGL | 1.000 | 1.000 |"), "{report}");
    assert!(report.contains("| Spirit | 1.000 | 1.000 |"), "{report}");
}

#[test]
fn baseline_runs_drain_on_every_parsing_domain() {
    let (_dir, ws) = setup();
    let (exit, out, err) = cli(&ws, &["baseline"]);
    assert_eq!(exit, Exit::Ok, "{err}");
    assert_eq!(out.lines().filter(|l| l.starts_with("drain ")).count(), 7);
    assert!(out.contains("over 1800 logs"));
    let (exit, out, _) = cli(&ws, &["report", "--capability", "parsing"]);
    assert_eq!(exit, Exit::Ok);
    assert!(out.starts_with("### Log Parsing (drain)"), "{out}");
    assert!(out.contains("| Avg. |"));
}

#[test]
fn report_without_runs_fails() {
    let (_dir, ws) = setup();
    let (exit, _, err) = cli(&ws, &["report"]);
    assert_eq!(exit, Exit::Failure);
    assert!(err.contains("no runs"), "{err}");
}

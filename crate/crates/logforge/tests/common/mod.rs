//! Synthetic corpora with the shapes and sizes of the public benchmarks, and
//! helpers to lay them out on disk with a matching run config.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use logforge::cli::{execute, Cli, Console, Exit};
use logforge::gateway::{CassetteEntry, CassetteTransport, ScriptedReply};
use logforge::ingest::{
    write_community_cases, write_labeled_logs, write_labeled_templates, write_loghub, FieldMap,
};
use logforge_core::instruct::{irs_pair_id, render_decomposition_prompt, serialize_reply, Triple};
use logforge_core::{
    Capability, CommunityCase, Label, LabeledTemplate, LogRecord, TemplateAnnotation,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PARSING_DOMAINS: [&str; 7] = [
    "HDFS",
    "Hadoop",
    "Zookeeper",
    "BGL",
    "HPC",
    "Linux",
    "Proxifier",
];
pub const LOGS_PER_DOMAIN: usize = 2000;
pub const BGL_TEMPLATES: usize = 1766;
pub const SPIRIT_TEMPLATES: usize = 1297;
pub const CASES: usize = 384;
pub const EXCLUDED_PER_CAPABILITY: usize = 8;

const WORDS: [&str; 24] = [
    "connection",
    "block",
    "received",
    "from",
    "node",
    "request",
    "served",
    "closing",
    "session",
    "error",
    "packet",
    "responder",
    "terminating",
    "verification",
    "succeeded",
    "opened",
    "for",
    "user",
    "failed",
    "kernel",
    "interrupt",
    "cache",
    "flush",
    "worker",
];

fn variable(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..4) {
        0 => rng.random_range(0..100_000u32).to_string(),
        1 => format!(
            "10.{}.{}.{}",
            rng.random_range(0..255),
            rng.random_range(0..255),
            rng.random_range(0..255)
        ),
        2 => format!("blk_{}", rng.random_range(-9_000_000i64..9_000_000)),
        _ => format!("0x{:x}", rng.random::<u32>()),
    }
}

/// Template shapes for one domain: static words with `<*>` slots.
fn template_shapes(rng: &mut ChaCha8Rng, domain: &str, n: usize) -> Vec<Vec<Option<String>>> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(3..9);
            let mut tokens: Vec<Option<String>> = (0..len)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        None
                    } else {
                        Some(WORDS[rng.random_range(0..WORDS.len())].to_string())
                    }
                })
                .collect();
            tokens[0] = Some(format!("{domain}-e{i}"));
            tokens
        })
        .collect()
}

/// A structured log of `n` lines whose ground truth uses `<*>` for variables.
pub fn loghub_rows(domain: &str, n: usize, seed: u64) -> Vec<(LogRecord, TemplateAnnotation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = template_shapes(&mut rng, domain, 40);
    (1..=n as u64)
        .map(|line_id| {
            let shape = &shapes[rng.random_range(0..shapes.len())];
            let content: Vec<String> = shape
                .iter()
                .map(|t| t.clone().unwrap_or_else(|| variable(&mut rng)))
                .collect();
            let template: Vec<&str> = shape
                .iter()
                .map(|t| t.as_deref().unwrap_or("<*>"))
                .collect();
            (
                LogRecord {
                    line_id,
                    content: content.join(" "),
                    domain: domain.to_string(),
                },
                TemplateAnnotation {
                    line_id,
                    template: template.join(" "),
                },
            )
        })
        .collect()
}

/// `n` distinct templates, roughly `abnormal` of them labelled abnormal.
pub fn labeled_templates(domain: &str, n: usize, abnormal: f64, seed: u64) -> Vec<LabeledTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let a = WORDS[rng.random_range(0..WORDS.len())];
            let b = WORDS[rng.random_range(0..WORDS.len())];
            LabeledTemplate {
                template: format!("{domain} t{i} {a} <*> {b}"),
                label: if rng.random_bool(abnormal) {
                    Label::Abnormal
                } else {
                    Label::Normal
                },
                domain: domain.to_string(),
            }
        })
        .collect()
}

/// Labelled raw logs whose templates come from `templates`.
pub fn labeled_logs(
    templates: &[LabeledTemplate],
    n: usize,
    seed: u64,
) -> Vec<(LogRecord, TemplateAnnotation, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n as u64)
        .map(|line_id| {
            let t = &templates[rng.random_range(0..templates.len())];
            (
                LogRecord {
                    line_id,
                    content: t.template.replace("<*>", &variable(&mut rng)),
                    domain: t.domain.clone(),
                },
                TemplateAnnotation {
                    line_id,
                    template: t.template.clone(),
                },
                t.label,
            )
        })
        .collect()
}

pub fn community_cases(n: usize) -> Vec<CommunityCase> {
    (1..=n)
        .map(|i| CommunityCase {
            case_id: format!("so-{i:04}"),
            title: format!("Apache httpd fails after change {i}"),
            problem: format!(
                "After editing the config for site {i} the server stops answering requests."
            ),
            log: format!(
                "[error] [client 10.0.0.{}] AH00{i:03}: worker {i} exited with status 1",
                i % 250
            ),
            resolution: format!(
                "Restore the directive in vhost {i} and reload the server with apachectl graceful."
            ),
        })
        .collect()
}

pub fn perfect_triples(case: &CommunityCase) -> [Triple; 3] {
    let t = |capability, instruction: String, response: String| Triple {
        capability,
        instruction,
        input: case.log.clone(),
        response,
    };
    [
        t(
            Capability::Interpretation,
            format!("Explain what this log from case {} means.", case.case_id),
            format!(
                "A worker process of the server exited while handling {}.",
                case.title
            ),
        ),
        t(
            Capability::RootCause,
            format!("What caused the failure reported in case {}?", case.case_id),
            case.problem.clone(),
        ),
        t(
            Capability::Solution,
            format!("How can the problem in case {} be fixed?", case.case_id),
            case.resolution.clone(),
        ),
    ]
}

pub fn perfect_reply(case: &CommunityCase) -> String {
    serialize_reply(&perfect_triples(case))
}

pub fn decomposition_cassette(cases: &[CommunityCase]) -> Vec<CassetteEntry> {
    cases
        .iter()
        .map(|c| {
            CassetteEntry::for_prompt(
                render_decomposition_prompt(c),
                vec![ScriptedReply::ok(perfect_reply(c))],
            )
        })
        .collect()
}

/// Pair ids removed in calibration: the first few cases of each capability,
/// a different block of cases per capability.
pub fn exclusion_list(cases: &[CommunityCase]) -> String {
    let mut out = String::from("# removed during review\n");
    for (k, capability) in Capability::IRS.into_iter().enumerate() {
        for c in cases
            .iter()
            .skip(k * EXCLUDED_PER_CAPABILITY)
            .take(EXCLUDED_PER_CAPABILITY)
        {
            let _ = writeln!(out, "{}", irs_pair_id(capability, &c.case_id));
        }
    }
    out
}

pub struct Workspace {
    pub root: PathBuf,
    pub config: PathBuf,
    pub cases: Vec<CommunityCase>,
}

/// Writes the full synthetic corpus, a perfect decomposition cassette and a
/// config that reads all of it.
pub fn synthetic_workspace(root: &Path) -> Workspace {
    let data = root.join("data");
    fs::create_dir_all(&data).unwrap();
    let mut toml = String::from(
        "seed = 42\n\n[sources]\ncommunity = \"data/cases.jsonl\"\n\
         decomposed = \"decomposed/decomposed.jsonl\"\nexclusions = \"data/exclusions.txt\"\n\n[sources.parsing]\n",
    );
    for (i, d) in PARSING_DOMAINS.iter().enumerate() {
        let rows = loghub_rows(d, LOGS_PER_DOMAIN, 100 + i as u64);
        write_loghub(&data.join(format!("{d}_2k.log_structured.csv")), &rows).unwrap();
        let _ = writeln!(toml, "{d} = \"data/{d}_2k.log_structured.csv\"");
    }

    let bgl = labeled_templates("BGL", BGL_TEMPLATES, 0.1, 7);
    let spirit = labeled_templates("Spirit", SPIRIT_TEMPLATES, 0.1, 8);
    write_labeled_templates(&data.join("bgl_templates.csv"), &bgl).unwrap();
    write_labeled_templates(&data.join("spirit_templates.csv"), &spirit).unwrap();
    toml.push_str("\n[sources.anomaly]\nBGL = \"data/bgl_templates.csv\"\nSpirit = \"data/spirit_templates.csv\"\n");

    write_labeled_logs(&data.join("BGL_labeled.csv"), &labeled_logs(&bgl, 3050, 9)).unwrap();
    write_labeled_logs(
        &data.join("Spirit_labeled.csv"),
        &labeled_logs(&spirit, 2020, 10),
    )
    .unwrap();
    toml.push_str("\n[sources.sessions]\nBGL = \"data/BGL_labeled.csv\"\nSpirit = \"data/Spirit_labeled.csv\"\n");

    let cases = community_cases(CASES);
    write_community_cases(&data.join("cases.jsonl"), &cases, &FieldMap::default()).unwrap();
    CassetteTransport::save(
        &decomposition_cassette(&cases),
        &root.join("decompose.cassette.json"),
    )
    .unwrap();
    fs::write(data.join("exclusions.txt"), exclusion_list(&cases)).unwrap();

    let config = root.join("logforge.toml");
    fs::write(&config, toml).unwrap();
    Workspace {
        root: root.to_path_buf(),
        config,
        cases,
    }
}

/// Runs the CLI in-process and returns (exit, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (Exit, String, String) {
    use clap::Parser;
    let cli = Cli::try_parse_from(std::iter::once("logforge").chain(args.iter().copied()))
        .expect("arguments parse");
    let mut out = Vec::new();
    let mut err = Vec::new();
    let exit = {
        let mut console = Console {
            out: &mut out,
            err: &mut err,
        };
        match execute(&cli, &mut console) {
            Ok(exit) => exit,
            Err(e) => {
                let _ = writeln!(console.err, "error: {e}");
                e.exit()
            }
        }
    };
    (
        exit,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

/// Shuffled copy, for order-independence checks.
pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

//! Evaluation runs: prompt, collect replies, extract answers, score, persist
//! per-example artifacts and render reports from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use logforge_core::extract::{
    extract_free_text, extract_template, extract_verdict, ExtractedAnswer,
};
use logforge_core::instruct::{short_digest, PromptTemplate};
use logforge_core::metrics::anomaly::anomaly_f1;
use logforge_core::metrics::parsing::{rand_index_keys, template_confusion};
use logforge_core::metrics::{score_text, Confidence, Confusion, TextMetricConfig};
use logforge_core::split::{build_sessions, exclude_overlap, SplitError};
use logforge_core::{Canonicalizer, Capability, Label, LogRecord, TemplateAnnotation};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, read_jsonl, write_json, write_jsonl, DatasetError, EvalExample};
use crate::gateway::{ChatRequest, Gateway, GatewayError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no test examples for {capability} / {domain}")]
    EmptyTestSet {
        capability: Capability,
        domain: String,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{domain}: {source}")]
    Sessions {
        domain: String,
        #[source]
        source: SplitError,
    },
    #[error("{0}")]
    Report(#[from] ReportError),
}

/// Something that answers prompts: a live model behind the gateway, or a
/// fixed table of replies.
pub trait Responder: Sync {
    fn model(&self) -> &str;
    fn respond(
        &self,
        prompts: &[(String, String)],
    ) -> Result<Vec<Result<String, GatewayError>>, GatewayError>;
}

pub struct GatewayResponder<'g> {
    pub gateway: &'g Gateway,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
}

impl Responder for GatewayResponder<'_> {
    fn model(&self) -> &str {
        &self.model
    }

    fn respond(
        &self,
        prompts: &[(String, String)],
    ) -> Result<Vec<Result<String, GatewayError>>, GatewayError> {
        let requests: Vec<ChatRequest> = prompts
            .iter()
            .map(|(id, text)| {
                ChatRequest::user(format!("eval-{id}"), self.model.clone(), text.clone())
                    .with_sampling(self.temperature, self.max_tokens)
            })
            .collect();
        Ok(self
            .gateway
            .complete_batch(&requests, self.max_in_flight)?
            .into_iter()
            .map(|r| r.map(|reply| reply.content))
            .collect())
    }
}

/// Replies looked up by example id.
pub struct TableResponder {
    pub name: String,
    pub replies: BTreeMap<String, String>,
}

impl TableResponder {
    /// Answers every example with its own reference.
    pub fn references(examples: &[EvalExample]) -> Self {
        TableResponder {
            name: "reference".into(),
            replies: examples
                .iter()
                .map(|e| (e.id.clone(), e.reference.clone()))
                .collect(),
        }
    }
}

impl Responder for TableResponder {
    fn model(&self) -> &str {
        &self.name
    }

    fn respond(
        &self,
        prompts: &[(String, String)],
    ) -> Result<Vec<Result<String, GatewayError>>, GatewayError> {
        Ok(prompts
            .iter()
            .map(|(id, _)| {
                self.replies
                    .get(id)
                    .cloned()
                    .ok_or_else(|| GatewayError::NoCassetteEntry {
                        request_id: id.clone(),
                        hash: String::new(),
                    })
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    #[default]
    Template,
    Session,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    /// Ask about each distinct template; a session is abnormal iff any of its
    /// templates is.
    #[default]
    Lift,
    /// Ask about the whole session text at once.
    Prompt,
}

/// One prompt and everything that came back for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub prompt: String,
    pub reference: String,
    pub log: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extracted: Option<ExtractedAnswer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: usize,
    pub label: Label,
    /// Indices into the session query records.
    pub queries: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub built: usize,
    pub dropped_overlap: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub run_id: String,
    pub capability: Capability,
    pub domain: String,
    pub model: String,
    pub prompt_template: String,
    pub level: Level,
    pub n_examples: usize,
    pub scores: BTreeMap<String, f64>,
    pub fallback_count: usize,
    /// Examples with no usable reply (gateway failure).
    pub failed_count: usize,
    /// Parsing examples whose ground truth does not align with the log.
    #[serde(default)]
    pub unaligned_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sessions: Option<SessionStats>,
    pub started_ms: u64,
    pub finished_ms: u64,
}

impl EvalRun {
    pub fn is_partial(&self) -> bool {
        self.failed_count > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub run: EvalRun,
    pub examples: Vec<ExampleRecord>,
    pub session_queries: Vec<ExampleRecord>,
    pub sessions: Vec<SessionRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub prompt_template: String,
    pub text: TextMetricConfig,
    pub canonicalizer: Canonicalizer,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub fn run_id(capability: Capability, domain: &str, model: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    format!("{}-{}-{}", capability.as_str(), clean(domain), clean(model))
}

fn extract(
    capability: Capability,
    reply: &str,
    log: &str,
    canon: &Canonicalizer,
) -> ExtractedAnswer {
    match capability {
        Capability::Parsing => extract_template(reply, canon, Some(log)),
        Capability::Anomaly => extract_verdict(reply),
        _ => extract_free_text(reply),
    }
}

fn ask(
    capability: Capability,
    items: Vec<(String, String, String, String)>,
    responder: &dyn Responder,
    canon: &Canonicalizer,
) -> Result<Vec<ExampleRecord>, GatewayError> {
    let prompts: Vec<(String, String)> = items
        .iter()
        .map(|(id, p, _, _)| (id.clone(), p.clone()))
        .collect();
    let replies = responder.respond(&prompts)?;
    Ok(items
        .into_iter()
        .zip(replies)
        .map(|((id, prompt, reference, log), reply)| {
            let (reply, error, extracted) = match reply {
                Ok(text) => {
                    let e = extract(capability, &text, &log, canon);
                    (Some(text), None, Some(e))
                }
                Err(e) => (None, Some(e.to_string()), None),
            };
            ExampleRecord {
                id,
                prompt,
                reference,
                log,
                reply,
                error,
                extracted,
            }
        })
        .collect())
}

/// Prompts the responder with every example of one (capability, domain) and
/// scores the replies. Gateway failures on individual examples do not abort
/// the run; they are counted in `failed_count`.
pub fn run_capability(
    capability: Capability,
    domain: &str,
    examples: &[EvalExample],
    responder: &dyn Responder,
    options: &RunOptions,
) -> Result<RunArtifacts, HarnessError> {
    let examples: Vec<&EvalExample> = examples
        .iter()
        .filter(|e| e.capability == capability && e.domain == domain)
        .collect();
    if examples.is_empty() {
        return Err(HarnessError::EmptyTestSet {
            capability,
            domain: domain.to_string(),
        });
    }
    let started_ms = now_ms();
    let items = examples
        .iter()
        .map(|e| (e.id.clone(), e.prompt(), e.reference.clone(), e.log.clone()))
        .collect();
    let records = ask(capability, items, responder, &options.canonicalizer)?;
    let mut artifacts = RunArtifacts {
        run: EvalRun {
            run_id: run_id(capability, domain, responder.model()),
            capability,
            domain: domain.to_string(),
            model: responder.model().to_string(),
            prompt_template: options.prompt_template.clone(),
            level: Level::Template,
            n_examples: records.len(),
            scores: BTreeMap::new(),
            fallback_count: 0,
            failed_count: 0,
            unaligned_count: 0,
            sessions: None,
            started_ms,
            finished_ms: 0,
        },
        examples: records,
        session_queries: Vec::new(),
        sessions: Vec::new(),
    };
    rescore(&mut artifacts, &options.text);
    artifacts.run.finished_ms = now_ms();
    Ok(artifacts)
}

/// Labelled raw logs of one domain, used for session-level evaluation.
pub struct SessionSource<'a> {
    pub logs: &'a [(LogRecord, TemplateAnnotation, Label)],
    pub training_templates: &'a BTreeSet<String>,
    pub window: usize,
    pub mode: SessionMode,
    pub anomaly_template: &'a PromptTemplate,
}

/// Adds session-level results (S-F1) to an anomaly run.
pub fn add_sessions(
    artifacts: &mut RunArtifacts,
    source: &SessionSource<'_>,
    responder: &dyn Responder,
    options: &RunOptions,
) -> Result<(), HarnessError> {
    let domain = artifacts.run.domain.clone();
    let labels: Vec<Label> = source.logs.iter().map(|(_, _, l)| *l).collect();
    let built = build_sessions(&labels, source.window).map_err(|e| HarnessError::Sessions {
        domain: domain.clone(),
        source: e,
    })?;
    let n_built = built.len();
    let (kept, dropped) = exclude_overlap(
        built,
        |i| source.logs[i].1.template.as_str(),
        source.training_templates,
    );

    let mut items: Vec<(String, String, String, String)> = Vec::new();
    let mut sessions = Vec::with_capacity(kept.len());
    match source.mode {
        SessionMode::Lift => {
            let mut index: BTreeMap<&str, usize> = BTreeMap::new();
            for s in &kept {
                let mut queries = BTreeSet::new();
                for &m in &s.member_indices {
                    let template = source.logs[m].1.template.as_str();
                    let next = index.len();
                    let q = *index.entry(template).or_insert_with(|| {
                        items.push((
                            format!("session-{domain}-{}", short_digest(template)),
                            source.anomaly_template.render(template),
                            String::new(),
                            template.to_string(),
                        ));
                        next
                    });
                    queries.insert(q);
                }
                sessions.push(SessionRecord {
                    session_id: s.session_id,
                    label: s.label,
                    queries: queries.into_iter().collect(),
                });
            }
        }
        SessionMode::Prompt => {
            for s in &kept {
                let text: Vec<&str> = s
                    .member_indices
                    .iter()
                    .map(|&m| source.logs[m].0.content.as_str())
                    .collect();
                let text = text.join("\n");
                sessions.push(SessionRecord {
                    session_id: s.session_id,
                    label: s.label,
                    queries: vec![items.len()],
                });
                items.push((
                    format!("session-{domain}-{}", s.session_id),
                    source.anomaly_template.render(&text),
                    s.label.as_str().to_string(),
                    text,
                ));
            }
        }
    }
    artifacts.session_queries = ask(
        Capability::Anomaly,
        items,
        responder,
        &options.canonicalizer,
    )?;
    artifacts.sessions = sessions;
    artifacts.run.level = Level::Session;
    artifacts.run.sessions = Some(SessionStats {
        built: n_built,
        dropped_overlap: dropped,
        kept: kept.len(),
    });
    rescore(artifacts, &options.text);
    artifacts.run.finished_ms = now_ms();
    Ok(())
}

/// Recomputes every score and counter of `artifacts.run` from its records.
pub fn rescore(artifacts: &mut RunArtifacts, text: &TextMetricConfig) {
    let run = &mut artifacts.run;
    run.scores.clear();
    run.failed_count = artifacts
        .examples
        .iter()
        .filter(|r| r.extracted.is_none())
        .count()
        + artifacts
            .session_queries
            .iter()
            .filter(|r| r.extracted.is_none())
            .count();
    run.fallback_count = artifacts
        .examples
        .iter()
        .chain(&artifacts.session_queries)
        .filter(|r| {
            r.extracted
                .as_ref()
                .is_some_and(|e| e.confidence == Confidence::Fallback)
        })
        .count();
    run.unaligned_count = 0;
    run.n_examples = artifacts.examples.len();
    let answered: Vec<(&ExampleRecord, &ExtractedAnswer)> = artifacts
        .examples
        .iter()
        .filter_map(|r| r.extracted.as_ref().map(|e| (r, e)))
        .collect();

    match run.capability {
        Capability::Parsing => {
            let gt: Vec<&str> = answered.iter().map(|(r, _)| r.reference.as_str()).collect();
            let pred: Vec<&str> = answered
                .iter()
                .map(|(_, e)| e.normalized.as_str())
                .collect();
            let ri = rand_index_keys(&gt, &pred).expect("parallel lists");
            let mut confusion = Confusion::default();
            for (r, e) in &answered {
                match template_confusion(&r.log, &r.reference, &e.normalized) {
                    Ok(c) => confusion += c,
                    Err(_) => run.unaligned_count += 1,
                }
            }
            run.scores.insert("ri".into(), ri);
            run.scores.insert("f1".into(), confusion.f1());
        }
        Capability::Anomaly => {
            let gt: Vec<Label> = answered
                .iter()
                .map(|(r, _)| r.reference.parse().unwrap_or(Label::Normal))
                .collect();
            let pred: Vec<Label> = answered.iter().map(|(_, e)| e.label()).collect();
            let score = anomaly_f1(&gt, &pred).expect("parallel lists");
            run.scores.insert("t_f1".into(), score.f1);
            if run.level == Level::Session {
                let verdicts: Vec<Option<Label>> = artifacts
                    .session_queries
                    .iter()
                    .map(|q| q.extracted.as_ref().map(ExtractedAnswer::label))
                    .collect();
                let mut gt = Vec::new();
                let mut pred = Vec::new();
                for s in &artifacts.sessions {
                    // A session with an unanswered member cannot be judged.
                    let Some(members) = s
                        .queries
                        .iter()
                        .map(|&q| verdicts[q])
                        .collect::<Option<Vec<Label>>>()
                    else {
                        continue;
                    };
                    gt.push(s.label);
                    pred.push(if members.iter().any(|l| l.is_abnormal()) {
                        Label::Abnormal
                    } else {
                        Label::Normal
                    });
                }
                let score = anomaly_f1(&gt, &pred).expect("parallel lists");
                run.scores.insert("s_f1".into(), score.f1);
            }
        }
        _ => {
            let mut sums = [0.0f64; 4];
            let mut n = 0usize;
            for (r, e) in &answered {
                if let Ok(s) = score_text(&e.normalized, &r.reference, text) {
                    for (acc, v) in sums.iter_mut().zip([s.bleu, s.rouge1, s.rouge2, s.rouge_l]) {
                        *acc += v;
                    }
                    n += 1;
                }
            }
            for (name, sum) in ["bleu", "rouge1", "rouge2", "rouge_l"]
                .into_iter()
                .zip(sums)
            {
                run.scores
                    .insert(name.into(), if n == 0 { 0.0 } else { sum / n as f64 });
            }
        }
    }
}

const META_FILE: &str = "meta.json";
const EXAMPLES_FILE: &str = "examples.jsonl";
const QUERIES_FILE: &str = "session_queries.jsonl";
const SESSIONS_FILE: &str = "sessions.jsonl";

/// Writes `<root>/runs/<run_id>/{meta.json, examples.jsonl, ...}`.
pub fn write_run(root: &Path, artifacts: &RunArtifacts) -> Result<PathBuf, DatasetError> {
    let dir = root.join("runs").join(&artifacts.run.run_id);
    write_json(&dir.join(META_FILE), &artifacts.run)?;
    write_jsonl(&dir.join(EXAMPLES_FILE), &artifacts.examples)?;
    if artifacts.run.level == Level::Session {
        write_jsonl(&dir.join(QUERIES_FILE), &artifacts.session_queries)?;
        write_jsonl(&dir.join(SESSIONS_FILE), &artifacts.sessions)?;
    }
    Ok(dir)
}

/// Reads one run directory and recomputes its scores from the records.
pub fn load_run(dir: &Path, text: &TextMetricConfig) -> Result<RunArtifacts, DatasetError> {
    let run: EvalRun = read_json(&dir.join(META_FILE))?;
    let examples = read_jsonl(&dir.join(EXAMPLES_FILE))?;
    let (session_queries, sessions) = if run.level == Level::Session {
        (
            read_jsonl(&dir.join(QUERIES_FILE))?,
            read_jsonl(&dir.join(SESSIONS_FILE))?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let mut artifacts = RunArtifacts {
        run,
        examples,
        session_queries,
        sessions,
    };
    rescore(&mut artifacts, text);
    Ok(artifacts)
}

/// Every run under `<root>/runs`, sorted by run id.
pub fn load_runs(root: &Path, text: &TextMetricConfig) -> Result<Vec<EvalRun>, DatasetError> {
    let runs_dir = root.join("runs");
    let entries = match fs::read_dir(&runs_dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(DatasetError::Io {
                path: runs_dir,
                source,
            })
        }
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|d| load_run(d, text).map(|a| a.run))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("no runs to report")]
    Empty,
    #[error("runs mix capabilities {0} and {1}")]
    MixedCapability(Capability, Capability),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Json,
}

const DOMAIN_ORDER: [&str; 8] = [
    "HDFS",
    "Hadoop",
    "Zookeeper",
    "BGL",
    "HPC",
    "Linux",
    "Proxifier",
    "Spirit",
];

fn domain_rank(domain: &str) -> (usize, String) {
    let i = DOMAIN_ORDER
        .iter()
        .position(|d| *d == domain)
        .unwrap_or(DOMAIN_ORDER.len());
    (i, domain.to_string())
}

/// Metric keys and headers, in column order.
fn columns(capability: Capability, runs: &[&EvalRun]) -> Vec<(&'static str, &'static str)> {
    match capability {
        Capability::Parsing => vec![("ri", "RI"), ("f1", "F1")],
        Capability::Anomaly => {
            let mut cols = vec![("t_f1", "T-F1")];
            if runs.iter().any(|r| r.scores.contains_key("s_f1")) {
                cols.push(("s_f1", "S-F1"));
            }
            cols
        }
        _ => vec![
            ("bleu", "BLEU"),
            ("rouge1", "ROUGE-1"),
            ("rouge2", "ROUGE-2"),
            ("rouge_l", "ROUGE-L"),
        ],
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Serialize)]
struct JsonTable<'a> {
    capability: Capability,
    model: &'a str,
    columns: Vec<&'static str>,
    rows: Vec<JsonRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    average: Option<BTreeMap<&'static str, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregation: Option<&'static str>,
}

#[derive(Serialize)]
struct JsonRow {
    domain: String,
    scores: BTreeMap<&'static str, f64>,
    n_examples: usize,
    fallback_count: usize,
    failed_count: usize,
}

/// Renders one table per model: a row per domain (in the usual benchmark
/// order) and, when there is more than one row, an `Avg.` row recomputed from
/// the row values.
pub fn render_report(runs: &[EvalRun], format: ReportFormat) -> Result<String, ReportError> {
    let first = runs.first().ok_or(ReportError::Empty)?;
    if let Some(other) = runs.iter().find(|r| r.capability != first.capability) {
        return Err(ReportError::MixedCapability(
            first.capability,
            other.capability,
        ));
    }
    let capability = first.capability;
    let mut by_model: BTreeMap<&str, Vec<&EvalRun>> = BTreeMap::new();
    for r in runs {
        by_model.entry(&r.model).or_default().push(r);
    }

    let mut md = String::new();
    let mut tables = Vec::new();
    for (model, mut rows) in by_model {
        rows.sort_by_key(|r| domain_rank(&r.domain));
        let cols = columns(capability, &rows);
        let average: Option<Vec<Option<f64>>> = (rows.len() > 1).then(|| {
            cols.iter()
                .map(|(k, _)| mean(rows.iter().filter_map(|r| r.scores.get(*k).copied())))
                .collect()
        });
        let aggregation = (!matches!(capability, Capability::Parsing | Capability::Anomaly))
            .then_some("per-example mean");

        match format {
            ReportFormat::Markdown => {
                if !md.is_empty() {
                    md.push('\n');
                }
                let _ = writeln!(md, "### {} ({model})\n", capability.title());
                md.push_str("| Domain |");
                for (_, h) in &cols {
                    let _ = write!(md, " {h} |");
                }
                md.push_str("\n|---|");
                md.push_str(&"---:|".repeat(cols.len()));
                md.push('\n');
                let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
                for r in &rows {
                    let _ = write!(md, "| {} |", r.domain);
                    for (k, _) in &cols {
                        let _ = write!(md, " {} |", cell(r.scores.get(*k).copied()));
                    }
                    md.push('\n');
                }
                if let Some(avg) = &average {
                    md.push_str("| Avg. |");
                    for v in avg {
                        let _ = write!(md, " {} |", cell(*v));
                    }
                    md.push('\n');
                }
                if let Some(a) = aggregation {
                    let _ = writeln!(md, "\nScores are the {a} over examples, on a 0-100 scale.");
                }
            }
            ReportFormat::Json => tables.push(JsonTable {
                capability,
                model,
                columns: cols.iter().map(|(k, _)| *k).collect(),
                rows: rows
                    .iter()
                    .map(|r| JsonRow {
                        domain: r.domain.clone(),
                        scores: cols
                            .iter()
                            .filter_map(|(k, _)| r.scores.get(*k).map(|v| (*k, *v)))
                            .collect(),
                        n_examples: r.n_examples,
                        fallback_count: r.fallback_count,
                        failed_count: r.failed_count,
                    })
                    .collect(),
                average: average.map(|avg| {
                    cols.iter()
                        .zip(avg)
                        .filter_map(|((k, _), v)| v.map(|v| (*k, v)))
                        .collect()
                }),
                aggregation,
            }),
        }
    }
    Ok(match format {
        ReportFormat::Markdown => md,
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&tables).expect("report serializes");
            s.push('\n');
            s
        }
    })
}

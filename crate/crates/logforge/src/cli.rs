//! Command-line front end. `main.rs` only parses arguments and maps the
//! result of [`execute`] to a process exit code.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use logforge_core::drain::ParseTree;
use logforge_core::instruct::{DecompositionResult, PromptTemplate};
use logforge_core::{Capability, LogRecord, TemplateAnnotation};

use crate::build::{build_dataset, BuildSources, IrsSource, PipelineError};
use crate::config::{BaselineMode, ConfigError, RunConfig};
use crate::dataset::{
    emit_dataset, load_built, read_exclusion_list, read_jsonl, review_rows, write_json,
    write_jsonl, DatasetError, EvalExample, MANIFEST_FILE, TEST_FILE, TRAIN_FILE,
};
use crate::decompose::decompose_cases;
use crate::gateway::{AuditLog, CassetteTransport, Gateway, GatewayError, HttpTransport};
use crate::harness::{
    add_sessions, load_runs, render_report, run_capability, write_run, EvalRun, GatewayResponder,
    HarnessError, Level, ReportFormat, RunOptions, SessionMode, SessionSource, TableResponder,
};
use crate::ingest::{
    ingest_community_cases, ingest_labeled_logs, ingest_labeled_templates, ingest_loghub,
    IngestError, IngestReport,
};

#[derive(Debug, Parser)]
#[command(
    name = "logforge",
    version,
    about = "Build instruction datasets for log analysis and evaluate models on them"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "logforge.toml")]
    pub config: PathBuf,
    /// Validate the configuration and print what would run, without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read every configured source and report what was accepted.
    Ingest {
        #[arg(long, value_parser = parse_capability)]
        capability: Vec<Capability>,
        #[arg(long)]
        domain: Vec<String>,
    },
    /// Split the sources and write the instruction dataset.
    Build,
    /// Turn community cases into interpretation / root cause / solution triples.
    Decompose {
        /// Replay replies from a cassette file or directory instead of calling the endpoint.
        #[arg(long)]
        mock: Option<PathBuf>,
    },
    /// Score the Drain parser on the held-out parsing logs.
    Baseline {
        #[arg(long)]
        domain: Vec<String>,
        /// Parse each domain as one stream instead of warming on the training logs.
        #[arg(long)]
        stream: bool,
    },
    /// Prompt the model with the held-out examples and score the replies.
    Eval {
        #[arg(long, value_parser = parse_capability)]
        capability: Vec<Capability>,
        #[arg(long)]
        domain: Vec<String>,
        #[arg(long)]
        mock: Option<PathBuf>,
        #[arg(long, value_enum)]
        level: Option<LevelArg>,
        /// Ask about whole sessions instead of lifting template verdicts.
        #[arg(long)]
        session_prompt: bool,
    },
    /// Render result tables from stored run artifacts.
    Report {
        #[arg(long, value_parser = parse_capability)]
        capability: Vec<Capability>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Template,
    Session,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    #[value(alias = "md")]
    Markdown,
    Json,
}

fn parse_capability(s: &str) -> Result<Capability, String> {
    s.parse()
        .map_err(|e: logforge_core::record::UnknownCapability| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok,
    Failure,
    Config,
    Partial,
    TransportExhausted,
}

impl Exit {
    pub fn code(self) -> u8 {
        match self {
            Exit::Ok => 0,
            Exit::Failure => 1,
            Exit::Config => 2,
            Exit::Partial => 3,
            Exit::TransportExhausted => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no dataset in {0}: run `logforge build` first")]
    MissingDataset(PathBuf),
    #[error("no runs in {0}: run `logforge eval` or `logforge baseline` first")]
    NoRuns(PathBuf),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        match self {
            CliError::Config(_) | CliError::MissingDataset(_) => Exit::Config,
            CliError::Gateway(GatewayError::MissingCredentials(_)) => Exit::Config,
            CliError::Gateway(e) if e.is_transient() => Exit::TransportExhausted,
            _ => Exit::Failure,
        }
    }
}

/// Where a command writes its human-readable output.
pub struct Console<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

pub fn execute(cli: &Cli, console: &mut Console<'_>) -> Result<Exit, CliError> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    match &cli.command {
        Command::Ingest { capability, domain } => {
            cmd_ingest(&config, capability, domain, cli.dry_run, console)
        }
        Command::Build => cmd_build(&config, cli.dry_run, console),
        Command::Decompose { mock } => {
            cmd_decompose(&config, mock.as_deref(), cli.dry_run, console)
        }
        Command::Baseline { domain, stream } => {
            cmd_baseline(&config, domain, *stream, cli.dry_run, console)
        }
        Command::Eval {
            capability,
            domain,
            mock,
            level,
            session_prompt,
        } => {
            let level = match level {
                Some(LevelArg::Template) => Level::Template,
                Some(LevelArg::Session) => Level::Session,
                None => config.eval.level,
            };
            let mode = if *session_prompt {
                SessionMode::Prompt
            } else {
                config.eval.session_mode
            };
            let request = EvalRequest {
                capabilities: if capability.is_empty() {
                    config.eval.capabilities.clone()
                } else {
                    capability.clone()
                },
                domains: domain.clone(),
                mock: mock.clone(),
                level,
                mode,
            };
            cmd_eval(&config, &request, cli.dry_run, console)
        }
        Command::Report { capability, format } => {
            let format = match format {
                FormatArg::Markdown => ReportFormat::Markdown,
                FormatArg::Json => ReportFormat::Json,
            };
            cmd_report(&config, capability, format, cli.dry_run, console)
        }
    }
}

fn wanted<T: PartialEq>(filter: &[T], value: &T) -> bool {
    filter.is_empty() || filter.contains(value)
}

fn plan(console: &mut Console<'_>, lines: &[String]) -> Result<Exit, CliError> {
    writeln!(console.out, "dry run: nothing written")?;
    for l in lines {
        writeln!(console.out, "  {l}")?;
    }
    Ok(Exit::Ok)
}

fn summarize(console: &mut Console<'_>, label: &str, report: &IngestReport) -> std::io::Result<()> {
    writeln!(
        console.out,
        "{label}: {} accepted, {} rejected, {} invalid UTF-8 sequences replaced",
        report.accepted,
        report.rejections.len(),
        report.replaced_sequences
    )?;
    for r in &report.rejections {
        writeln!(
            console.err,
            "warning: {label}: rejected {}: {}",
            r.record, r.reason
        )?;
    }
    Ok(())
}

fn cmd_ingest(
    config: &RunConfig,
    capabilities: &[Capability],
    domains: &[String],
    dry_run: bool,
    console: &mut Console<'_>,
) -> Result<Exit, CliError> {
    let s = &config.sources;
    let report_path = config.build.output_dir.join("ingest_report.json");
    let parsing: Vec<_> = s
        .parsing
        .iter()
        .filter(|(d, _)| wanted(domains, *d))
        .collect();
    let anomaly: Vec<_> = s
        .anomaly
        .iter()
        .filter(|(d, _)| wanted(domains, *d))
        .collect();
    let community = s
        .community
        .as_ref()
        .filter(|_| capabilities.iter().any(|c| c.is_irs()) || capabilities.is_empty());
    let parsing = if wanted(capabilities, &Capability::Parsing) {
        parsing
    } else {
        Vec::new()
    };
    let anomaly = if wanted(capabilities, &Capability::Anomaly) {
        anomaly
    } else {
        Vec::new()
    };

    if dry_run {
        let mut lines: Vec<String> = parsing
            .iter()
            .map(|(d, p)| format!("read parsing source {d}: {}", p.display()))
            .chain(
                anomaly
                    .iter()
                    .map(|(d, p)| format!("read anomaly source {d}: {}", p.display())),
            )
            .collect();
        if let Some(p) = community {
            lines.push(format!("read community cases: {}", p.display()));
        }
        lines.push(format!("write {}", report_path.display()));
        return plan(console, &lines);
    }

    let canon = config.canonicalizer()?;
    let mut reports = Vec::new();
    for (d, p) in parsing {
        let (_, report) = ingest_loghub(p, d, &canon)?;
        summarize(console, &format!("parsing {d}"), &report)?;
        reports.push(report);
    }
    for (d, p) in anomaly {
        let (_, report) = ingest_labeled_templates(p, d)?;
        summarize(console, &format!("anomaly {d}"), &report)?;
        reports.push(report);
    }
    if let Some(p) = community {
        let (_, report) = ingest_community_cases(p, &s.community_fields)?;
        summarize(console, "community", &report)?;
        reports.push(report);
    }
    write_json(&report_path, &reports)?;
    Ok(Exit::Ok)
}

fn gather_sources(config: &RunConfig) -> Result<BuildSources, CliError> {
    let canon = config.canonicalizer()?;
    let mut sources = BuildSources::default();
    for (d, p) in &config.sources.parsing {
        let (rows, _) = ingest_loghub(p, d, &canon)?;
        sources.parsing.push((d.clone(), rows));
    }
    for (d, p) in &config.sources.anomaly {
        let (items, _) = ingest_labeled_templates(p, d)?;
        sources.anomaly.push((d.clone(), items));
    }
    if let Some(p) = &config.sources.decomposed {
        let results: Vec<DecompositionResult> = read_jsonl(p)?;
        let exclusions = match &config.sources.exclusions {
            Some(p) => read_exclusion_list(p)?,
            None => BTreeSet::new(),
        };
        sources.irs = Some(IrsSource {
            results,
            exclusions,
        });
    }
    Ok(sources)
}

fn cmd_build(
    config: &RunConfig,
    dry_run: bool,
    console: &mut Console<'_>,
) -> Result<Exit, CliError> {
    config.require_build_sources()?;
    let settings = config.build_settings()?;
    let dir = &config.build.output_dir;
    if dry_run {
        let mut lines = vec![format!("seed {}", config.seed)];
        for (d, p) in &config.sources.parsing {
            lines.push(format!(
                "parsing {d}: {} (first {} of the logs for training)",
                p.display(),
                settings.parsing_fraction
            ));
        }
        for (d, p) in &config.sources.anomaly {
            lines.push(format!(
                "anomaly {d}: {} ({} templates for training)",
                p.display(),
                settings.anomaly_counts[d]
            ));
        }
        if let Some(p) = &config.sources.decomposed {
            lines.push(format!(
                "interpretation / root cause / solution: {} ({} for training)",
                p.display(),
                settings.irs_train_fraction
            ));
        }
        for f in [TRAIN_FILE, TEST_FILE, MANIFEST_FILE] {
            lines.push(format!("write {}", dir.join(f).display()));
        }
        return plan(console, &lines);
    }

    let sources = gather_sources(config)?;
    let built = build_dataset(&sources, &settings)?;
    let manifest = emit_dataset(&built.train, &dir.join(TRAIN_FILE), &built.meta)?;
    write_jsonl(&dir.join(TEST_FILE), built.test())?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;

    for (capability, domains) in &manifest.counts {
        for (domain, n) in domains {
            let test = manifest
                .test_counts
                .get(capability)
                .and_then(|d| d.get(domain))
                .unwrap_or(&0);
            writeln!(
                console.out,
                "{capability:<15} {domain:<12} {n:>6} train {test:>6} test"
            )?;
        }
    }
    for (capability, n) in &manifest.calibration_removed {
        if *n > 0 {
            writeln!(console.out, "{capability}: {n} removed in calibration")?;
        }
    }
    writeln!(
        console.out,
        "total {} pairs -> {}",
        manifest.total,
        dir.join(TRAIN_FILE).display()
    )?;
    Ok(Exit::Ok)
}

fn make_gateway(config: &RunConfig, mock: Option<&Path>) -> Result<Gateway, CliError> {
    let mut gateway = match mock {
        Some(path) => {
            let cassette = CassetteTransport::load(path).map_err(|e| ConfigError::Invalid {
                key: "--mock".into(),
                message: e.to_string(),
            })?;
            Gateway::new(cassette).with_sleeper(|_| {})
        }
        None => Gateway::new(HttpTransport::new(&config.llm.http)?),
    };
    gateway = gateway.with_retry(config.llm.retry);
    if let Some(budget) = config.llm.token_budget {
        gateway = gateway.with_budget(budget);
    }
    if let Some(path) = &config.llm.audit_log {
        gateway = gateway.with_audit(AuditLog::append_to(path)?);
    }
    Ok(gateway)
}

fn cmd_decompose(
    config: &RunConfig,
    mock: Option<&Path>,
    dry_run: bool,
    console: &mut Console<'_>,
) -> Result<Exit, CliError> {
    let source = config.require_community()?;
    let dir = &config.decompose.output_dir;
    let settings = &config.decompose.settings;
    if dry_run {
        let via = match mock {
            Some(p) => format!("cassette {}", p.display()),
            None => format!("{}{}", config.llm.http.base_url, config.llm.http.path),
        };
        return plan(
            console,
            &[
                format!("read community cases: {}", source.display()),
                format!(
                    "decompose with {} via {via} (temperature {}, {} parse retries)",
                    settings.model, settings.temperature, settings.parse_retries
                ),
                format!("write {}", dir.join("decomposed.jsonl").display()),
                format!("write {}", dir.join("quarantine.jsonl").display()),
                format!("write {}", dir.join("review.jsonl").display()),
            ],
        );
    }

    let (cases, report) = ingest_community_cases(source, &config.sources.community_fields)?;
    summarize(console, "community", &report)?;
    let gateway = make_gateway(config, mock)?;
    let outcome = decompose_cases(&gateway, &cases, settings)?;
    write_jsonl(&dir.join("decomposed.jsonl"), &outcome.results)?;
    write_jsonl(&dir.join("quarantine.jsonl"), &outcome.quarantine)?;
    write_jsonl(
        &dir.join("review.jsonl"),
        &review_rows(&outcome.results, &cases),
    )?;
    writeln!(
        console.out,
        "{} cases decomposed, {} triples, {} quarantined -> {}",
        outcome.results.len(),
        outcome.triple_count(),
        outcome.quarantine.len(),
        dir.display()
    )?;
    for q in &outcome.quarantine {
        writeln!(
            console.err,
            "warning: quarantined {} after {} attempts: {}",
            q.case_id, q.attempts, q.error
        )?;
    }
    Ok(if outcome.transport_exhausted > 0 {
        Exit::TransportExhausted
    } else {
        Exit::Ok
    })
}

/// Drain templates for every held-out log of one domain, keyed by example id.
fn drain_replies(
    rows: &[(LogRecord, TemplateAnnotation)],
    test: &[EvalExample],
    config: &RunConfig,
    mode: BaselineMode,
) -> Result<BTreeMap<String, String>, CliError> {
    let n_train = config.build.parsing_fraction.floor_mul(rows.len());
    let mut tree = ParseTree::new(config.baseline.drain).map_err(|e| ConfigError::Invalid {
        key: "baseline.drain".into(),
        message: e.to_string(),
    })?;
    match mode {
        BaselineMode::WarmThenFreeze => {
            for (r, _) in &rows[..n_train] {
                tree.insert(r.line_id, &r.content);
            }
            for (r, _) in &rows[n_train..] {
                tree.assign_frozen(r.line_id, &r.content);
            }
        }
        BaselineMode::Stream => {
            for (r, _) in rows {
                tree.insert(r.line_id, &r.content);
            }
        }
    }
    let assigned = tree.assignments();
    Ok(test
        .iter()
        .filter_map(|e| {
            let line_id: u64 = e.source.rsplit(':').next()?.parse().ok()?;
            Some((e.id.clone(), assigned.get(&line_id)?.clone()))
        })
        .collect())
}

fn cmd_baseline(
    config: &RunConfig,
    domains: &[String],
    stream: bool,
    dry_run: bool,
    console: &mut Console<'_>,
) -> Result<Exit, CliError> {
    let mode = if stream {
        BaselineMode::Stream
    } else {
        config.baseline.mode
    };
    let selected: Vec<(&String, &PathBuf)> = config
        .sources
        .parsing
        .iter()
        .filter(|(d, _)| wanted(domains, *d))
        .collect();
    if selected.is_empty() {
        return Err(ConfigError::Invalid {
            key: "sources.parsing".into(),
            message: "no parsing source selected".into(),
        }
        .into());
    }
    for (d, p) in &selected {
        if !p.exists() {
            return Err(ConfigError::MissingFile {
                key: format!("sources.parsing.{d}"),
                path: p.to_path_buf(),
            }
            .into());
        }
    }
    if dry_run {
        let mut lines: Vec<String> = selected
            .iter()
            .map(|(d, p)| {
                format!(
                    "drain {d}: {} ({mode:?}, {:?})",
                    p.display(),
                    config.baseline.drain
                )
            })
            .collect();
        lines.push(format!(
            "write runs under {}",
            config.eval.output_dir.join("runs").display()
        ));
        return plan(console, &lines);
    }

    let canon = config.canonicalizer()?;
    let settings = config.build_settings()?;
    let options = RunOptions {
        prompt_template: "drain".into(),
        text: config.eval.text_metrics,
        canonicalizer: canon.clone(),
    };
    for (d, p) in selected {
        let (rows, _) = ingest_loghub(p, d, &canon)?;
        let sources = BuildSources {
            parsing: vec![(d.clone(), rows.clone())],
            ..BuildSources::default()
        };
        let built = build_dataset(&sources, &settings)?;
        let responder = TableResponder {
            name: "drain".into(),
            replies: drain_replies(&rows, built.test(), config, mode)?,
        };
        let artifacts = run_capability(Capability::Parsing, d, built.test(), &responder, &options)?;
        write_run(&config.eval.output_dir, &artifacts)?;
        writeln!(
            console.out,
            "drain {d}: RI {:.3} F1 {:.3} over {} logs",
            artifacts.run.scores["ri"], artifacts.run.scores["f1"], artifacts.run.n_examples
        )?;
    }
    Ok(Exit::Ok)
}

pub struct EvalRequest {
    pub capabilities: Vec<Capability>,
    pub domains: Vec<String>,
    pub mock: Option<PathBuf>,
    pub level: Level,
    pub mode: SessionMode,
}

fn cmd_eval(
    config: &RunConfig,
    request: &EvalRequest,
    dry_run: bool,
    console: &mut Console<'_>,
) -> Result<Exit, CliError> {
    let dir = &config.build.output_dir;
    if !dir.join(MANIFEST_FILE).is_file() || !dir.join(TEST_FILE).is_file() {
        return Err(CliError::MissingDataset(dir.clone()));
    }
    let (manifest, test) = load_built(dir)?;
    let mut jobs: Vec<(Capability, String)> = Vec::new();
    for &c in &request.capabilities {
        let present: BTreeSet<&str> = test
            .iter()
            .filter(|e| e.capability == c)
            .map(|e| e.domain.as_str())
            .collect();
        for d in &request.domains {
            if !present.contains(d.as_str()) {
                return Err(ConfigError::Invalid {
                    key: "--domain".into(),
                    message: format!("no {c} test examples for {d} in {}", dir.display()),
                }
                .into());
            }
        }
        jobs.extend(
            present
                .into_iter()
                .filter(|d| wanted(&request.domains, &d.to_string()))
                .map(|d| (c, d.to_string())),
        );
    }
    let session_level = request.level == Level::Session;
    if session_level {
        let domains: Vec<String> = jobs
            .iter()
            .filter(|(c, _)| *c == Capability::Anomaly)
            .map(|(_, d)| d.clone())
            .collect();
        config.require_sessions(&domains)?;
    }
    if dry_run {
        let via = match &request.mock {
            Some(p) => format!("cassette {}", p.display()),
            None => format!("{}{}", config.llm.http.base_url, config.llm.http.path),
        };
        let mut lines = vec![format!("model {} via {via}", config.llm.model)];
        for (c, d) in &jobs {
            let n = test
                .iter()
                .filter(|e| e.capability == *c && &e.domain == d)
                .count();
            let extra = if session_level && *c == Capability::Anomaly {
                " + sessions"
            } else {
                ""
            };
            lines.push(format!("{c} {d}: {n} examples{extra}"));
        }
        lines.push(format!(
            "write runs and reports under {}",
            config.eval.output_dir.display()
        ));
        return plan(console, &lines);
    }

    let gateway = make_gateway(config, request.mock.as_deref())?;
    let responder = GatewayResponder {
        gateway: &gateway,
        model: config.llm.model.clone(),
        temperature: config.llm.temperature,
        max_tokens: config.llm.max_tokens,
        max_in_flight: config.llm.max_in_flight,
    };
    let anomaly_template = manifest
        .prompt_templates
        .iter()
        .find(|t| t.capability == Capability::Anomaly)
        .cloned()
        .unwrap_or_else(PromptTemplate::default_anomaly);
    let canon = config.canonicalizer()?;

    let mut runs: Vec<EvalRun> = Vec::new();
    for (c, d) in &jobs {
        let template = manifest
            .prompt_templates
            .iter()
            .find(|t| t.capability == *c)
            .map_or_else(|| "decomposition".to_string(), |t| t.name.clone());
        let options = RunOptions {
            prompt_template: template,
            text: config.eval.text_metrics,
            canonicalizer: canon.clone(),
        };
        let mut artifacts = run_capability(*c, d, &test, &responder, &options)?;
        if session_level && *c == Capability::Anomaly {
            let (logs, _) = ingest_labeled_logs(&config.sources.sessions[d], d, &canon)?;
            let training = manifest.anomaly_train_templates(d);
            let source = SessionSource {
                logs: &logs,
                training_templates: &training,
                window: config.eval.window,
                mode: request.mode,
                anomaly_template: &anomaly_template,
            };
            add_sessions(&mut artifacts, &source, &responder, &options)?;
        }
        write_run(&config.eval.output_dir, &artifacts)?;
        let scores: Vec<String> = artifacts
            .run
            .scores
            .iter()
            .map(|(k, v)| format!("{k} {v:.3}"))
            .collect();
        writeln!(
            console.out,
            "{c} {d}: {} ({} examples)",
            scores.join(", "),
            artifacts.run.n_examples
        )?;
        if artifacts.run.failed_count > 0 {
            writeln!(
                console.err,
                "warning: {c} {d}: {} examples without a reply",
                artifacts.run.failed_count
            )?;
        }
        runs.push(artifacts.run);
    }

    let capabilities: BTreeSet<Capability> = jobs.iter().map(|(c, _)| *c).collect();
    write_reports(config, &capabilities)?;

    Ok(if runs.iter().all(|r| r.failed_count == 0) {
        Exit::Ok
    } else if runs.iter().all(|r| r.failed_count >= r.n_examples) {
        Exit::TransportExhausted
    } else {
        Exit::Partial
    })
}

fn reports_dir(config: &RunConfig) -> PathBuf {
    config.eval.output_dir.join("reports")
}

/// Re-renders the report files of each capability from the stored runs.
fn write_reports(config: &RunConfig, capabilities: &BTreeSet<Capability>) -> Result<(), CliError> {
    let runs = load_runs(&config.eval.output_dir, &config.eval.text_metrics)?;
    let dir = reports_dir(config);
    for c in capabilities {
        let selected: Vec<EvalRun> = runs
            .iter()
            .filter(|r| r.capability == *c)
            .cloned()
            .collect();
        if selected.is_empty() {
            continue;
        }
        for (format, ext) in [(ReportFormat::Markdown, "md"), (ReportFormat::Json, "json")] {
            let text = render_report(&selected, format).map_err(HarnessError::from)?;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(format!("{c}.{ext}")), text)?;
        }
    }
    Ok(())
}

fn cmd_report(
    config: &RunConfig,
    capabilities: &[Capability],
    format: ReportFormat,
    dry_run: bool,
    console: &mut Console<'_>,
) -> Result<Exit, CliError> {
    let runs = load_runs(&config.eval.output_dir, &config.eval.text_metrics)?;
    let present: BTreeSet<Capability> = runs
        .iter()
        .map(|r| r.capability)
        .filter(|c| wanted(capabilities, c))
        .collect();
    if present.is_empty() {
        return Err(CliError::NoRuns(config.eval.output_dir.join("runs")));
    }
    if dry_run {
        let lines: Vec<String> = present
            .iter()
            .map(|c| {
                format!(
                    "render {c} into {}",
                    reports_dir(config).join(format!("{c}.md")).display()
                )
            })
            .collect();
        return plan(console, &lines);
    }
    write_reports(config, &present)?;
    let mut first = true;
    for c in &present {
        let selected: Vec<EvalRun> = runs
            .iter()
            .filter(|r| r.capability == *c)
            .cloned()
            .collect();
        let text = render_report(&selected, format).map_err(HarnessError::from)?;
        if !first {
            writeln!(console.out)?;
        }
        first = false;
        write!(console.out, "{text}")?;
    }
    Ok(Exit::Ok)
}

//! Readers (and matching writers) for the three source corpus families.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use logforge_core::record::UnknownLabel;
use logforge_core::{
    Canonicalizer, CommunityCase, Label, LabeledTemplate, LogRecord, TemplateAnnotation,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{line}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: missing column `{name}`")]
    MissingColumn { path: PathBuf, name: String },
    #[error("{path}: duplicate LineId {id}")]
    DuplicateLineId { path: PathBuf, id: u64 },
    #[error("{path}:{line}: {message}")]
    BadLineId {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: empty log content")]
    EmptyContent { path: PathBuf, line: usize },
    #[error("{path}:{line}: unknown label `{value}`")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{path}: duplicate template `{text}`")]
    DuplicateTemplate { path: PathBuf, text: String },
    #[error("{path}: record {case_id} has no `{field}` field")]
    MissingField {
        path: PathBuf,
        case_id: String,
        field: String,
    },
    #[error("{path}: no records")]
    EmptyCorpus { path: PathBuf },
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn csv(path: &Path, source: csv::Error) -> Self {
        IngestError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A source record that was read but not accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub record: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub path: PathBuf,
    pub kind: String,
    pub domain: Option<String>,
    pub accepted: usize,
    /// Invalid UTF-8 sequences replaced with U+FFFD.
    pub replaced_sequences: usize,
    pub rejections: Vec<Rejection>,
}

/// Reads a file as UTF-8, replacing invalid sequences and counting them.
pub fn read_lossy(path: &Path) -> Result<(String, usize), IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let mut text = String::with_capacity(bytes.len());
    let mut replaced = 0;
    for chunk in bytes.utf8_chunks() {
        text.push_str(chunk.valid());
        if !chunk.invalid().is_empty() {
            text.push(char::REPLACEMENT_CHARACTER);
            replaced += 1;
        }
    }
    Ok((text, replaced))
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "json" | "ndjson")
    )
}

struct Columns {
    indices: Vec<usize>,
}

impl Columns {
    fn find(path: &Path, headers: &csv::StringRecord, names: &[&str]) -> Result<Self, IngestError> {
        let indices = names
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h.trim().trim_start_matches('\u{feff}') == *name)
                    .ok_or_else(|| IngestError::MissingColumn {
                        path: path.to_path_buf(),
                        name: name.to_string(),
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Columns { indices })
    }

    fn get<'r>(&self, row: &'r csv::StringRecord, i: usize) -> &'r str {
        row.get(self.indices[i]).unwrap_or("")
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes())
}

type StructuredRow = (LogRecord, TemplateAnnotation, Option<String>);

fn read_structured(
    path: &Path,
    domain: &str,
    canon: &Canonicalizer,
    with_label: bool,
) -> Result<(Vec<StructuredRow>, IngestReport), IngestError> {
    let (text, replaced) = read_lossy(path)?;
    let mut reader = csv_reader(&text);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::csv(path, e))?
        .clone();
    let mut names = vec!["LineId", "Content", "EventTemplate"];
    if with_label {
        names.push("Label");
    }
    let cols = Columns::find(path, &headers, &names)?;

    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| IngestError::csv(path, e))?;
        let id: u64 = cols
            .get(&row, 0)
            .trim()
            .parse()
            .map_err(|e| IngestError::BadLineId {
                path: path.to_path_buf(),
                line,
                message: format!("LineId: {e}"),
            })?;
        if !seen.insert(id) {
            return Err(IngestError::DuplicateLineId {
                path: path.to_path_buf(),
                id,
            });
        }
        let content = cols.get(&row, 1);
        if content.trim().is_empty() {
            return Err(IngestError::EmptyContent {
                path: path.to_path_buf(),
                line,
            });
        }
        rows.push((
            LogRecord {
                line_id: id,
                content: content.to_string(),
                domain: domain.to_string(),
            },
            TemplateAnnotation {
                line_id: id,
                template: canon.canonicalize(cols.get(&row, 2)),
            },
            with_label.then(|| cols.get(&row, 3).trim().to_string()),
        ));
    }
    rows.sort_by_key(|(r, _, _)| r.line_id);

    let report = IngestReport {
        path: path.to_path_buf(),
        kind: if with_label { "labeled_logs" } else { "loghub" }.into(),
        domain: Some(domain.to_string()),
        accepted: rows.len(),
        replaced_sequences: replaced,
        rejections: Vec::new(),
    };
    Ok((rows, report))
}

/// Reads a structured log CSV (`LineId`, `Content`, `EventTemplate`).
///
/// Rows come back sorted by `LineId` whatever their order in the file, with
/// template placeholders canonicalized.
pub fn ingest_loghub(
    path: &Path,
    domain: &str,
    canon: &Canonicalizer,
) -> Result<(Vec<(LogRecord, TemplateAnnotation)>, IngestReport), IngestError> {
    let (rows, report) = read_structured(path, domain, canon, false)?;
    Ok((rows.into_iter().map(|(r, t, _)| (r, t)).collect(), report))
}

pub type LabeledLog = (LogRecord, TemplateAnnotation, Label);

/// A structured log whose rows also carry a `Label` column.
///
/// `-`, `normal` and `0` mean normal; `abnormal`, `1` and any other non-empty
/// value (BGL-style alert categories) mean abnormal.
pub fn ingest_labeled_logs(
    path: &Path,
    domain: &str,
    canon: &Canonicalizer,
) -> Result<(Vec<LabeledLog>, IngestReport), IngestError> {
    let (rows, report) = read_structured(path, domain, canon, true)?;
    let rows = rows
        .into_iter()
        .map(|(r, t, raw)| {
            let raw = raw.unwrap_or_default();
            let label = match raw.to_ascii_lowercase().as_str() {
                "-" | "normal" | "0" => Label::Normal,
                "" => {
                    return Err(IngestError::UnknownLabel {
                        path: path.to_path_buf(),
                        line: r.line_id as usize,
                        value: raw,
                    })
                }
                _ => Label::Abnormal,
            };
            Ok((r, t, label))
        })
        .collect::<Result<_, _>>()?;
    Ok((rows, report))
}

fn parse_label(raw: &str) -> Result<Label, UnknownLabel> {
    raw.parse()
}

/// Reads `template,label` rows from CSV, or `{"template", "label"}` objects
/// from JSONL when the extension is `.jsonl`/`.json`/`.ndjson`.
pub fn ingest_labeled_templates(
    path: &Path,
    domain: &str,
) -> Result<(Vec<LabeledTemplate>, IngestReport), IngestError> {
    let (text, replaced) = read_lossy(path)?;
    let mut raw: Vec<(usize, String, String)> = Vec::new();
    if is_jsonl(path) {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(line).map_err(|e| IngestError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let field = |name: &str| match v.get(name) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(Value::Number(n)) => Ok(n.to_string()),
                Some(Value::Bool(b)) => Ok(u8::from(*b).to_string()),
                _ => Err(IngestError::MissingField {
                    path: path.to_path_buf(),
                    case_id: format!("line {}", i + 1),
                    field: name.to_string(),
                }),
            };
            raw.push((i + 1, field("template")?, field("label")?));
        }
    } else {
        let mut reader = csv_reader(&text);
        let headers = reader
            .headers()
            .map_err(|e| IngestError::csv(path, e))?
            .clone();
        let cols = Columns::find(path, &headers, &["template", "label"])?;
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| IngestError::csv(path, e))?;
            raw.push((
                i + 2,
                cols.get(&row, 0).to_string(),
                cols.get(&row, 1).to_string(),
            ));
        }
    }

    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for (line, template, label) in raw {
        let label = parse_label(&label).map_err(|e| IngestError::UnknownLabel {
            path: path.to_path_buf(),
            line,
            value: e.0,
        })?;
        if !seen.insert(template.clone()) {
            return Err(IngestError::DuplicateTemplate {
                path: path.to_path_buf(),
                text: template,
            });
        }
        out.push(LabeledTemplate {
            template,
            label,
            domain: domain.to_string(),
        });
    }
    let report = IngestReport {
        path: path.to_path_buf(),
        kind: "labeled_templates".into(),
        domain: Some(domain.to_string()),
        accepted: out.len(),
        replaced_sequences: replaced,
        rejections: Vec::new(),
    };
    Ok((out, report))
}

/// Source field names for each `CommunityCase` field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub case_id: String,
    pub title: String,
    pub problem: String,
    pub log: String,
    pub resolution: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            case_id: "case_id".into(),
            title: "title".into(),
            problem: "problem".into(),
            log: "log".into(),
            resolution: "resolution".into(),
        }
    }
}

fn json_records(path: &Path, text: &str) -> Result<Vec<(usize, Value)>, IngestError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(trimmed).map_err(|e| IngestError::Json {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        return Ok(values
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i + 1, v))
            .collect());
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| IngestError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, v));
    }
    Ok(out)
}

/// Reads community cases from a JSON array or JSONL.
///
/// Records without a usable log or resolution are listed in the report's
/// rejections. A record without a case id gets `case-<n>`, `n` being its
/// 1-based position.
pub fn ingest_community_cases(
    path: &Path,
    fields: &FieldMap,
) -> Result<(Vec<CommunityCase>, IngestReport), IngestError> {
    let (text, replaced) = read_lossy(path)?;
    let records = json_records(path, &text)?;
    if records.is_empty() {
        return Err(IngestError::EmptyCorpus {
            path: path.to_path_buf(),
        });
    }

    let mut cases = Vec::new();
    let mut rejections = Vec::new();
    let mut ids = BTreeSet::new();
    for (n, (_, v)) in records.iter().enumerate() {
        let text_of = |name: &str| match v.get(name) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Number(x)) => Some(x.to_string()),
            _ => None,
        };
        let case_id = text_of(&fields.case_id).unwrap_or_else(|| format!("case-{}", n + 1));
        if !ids.insert(case_id.clone()) {
            rejections.push(Rejection {
                record: case_id,
                reason: "duplicate case id".into(),
            });
            continue;
        }
        let mut problem = None;
        for (field, name) in [(&fields.log, "log"), (&fields.resolution, "resolution")] {
            match text_of(field) {
                Some(s) if !s.trim().is_empty() => {}
                Some(_) => problem = problem.or(Some(format!("empty {name}"))),
                None => problem = problem.or(Some(format!("missing {name}"))),
            }
        }
        if let Some(reason) = problem {
            rejections.push(Rejection {
                record: case_id,
                reason,
            });
            continue;
        }
        cases.push(CommunityCase {
            case_id,
            title: text_of(&fields.title).unwrap_or_default(),
            problem: text_of(&fields.problem).unwrap_or_default(),
            log: text_of(&fields.log).unwrap_or_default(),
            resolution: text_of(&fields.resolution).unwrap_or_default(),
        });
    }
    let report = IngestReport {
        path: path.to_path_buf(),
        kind: "community_cases".into(),
        domain: None,
        accepted: cases.len(),
        replaced_sequences: replaced,
        rejections,
    };
    Ok((cases, report))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| IngestError::io(path, e))
}

fn csv_bytes<I, R>(path: &Path, header: &[&str], rows: I) -> Result<Vec<u8>, IngestError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| IngestError::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| IngestError::csv(path, e))?;
    }
    w.into_inner()
        .map_err(|e| IngestError::io(path, e.into_error()))
}

pub fn write_loghub(
    path: &Path,
    rows: &[(LogRecord, TemplateAnnotation)],
) -> Result<(), IngestError> {
    let bytes = csv_bytes(
        path,
        &["LineId", "Content", "EventTemplate"],
        rows.iter()
            .map(|(r, t)| [r.line_id.to_string(), r.content.clone(), t.template.clone()]),
    )?;
    write_file(path, &bytes)
}

pub fn write_labeled_logs(
    path: &Path,
    rows: &[(LogRecord, TemplateAnnotation, Label)],
) -> Result<(), IngestError> {
    let bytes = csv_bytes(
        path,
        &["LineId", "Label", "Content", "EventTemplate"],
        rows.iter().map(|(r, t, l)| {
            let label = if l.is_abnormal() { "abnormal" } else { "-" };
            [
                r.line_id.to_string(),
                label.to_string(),
                r.content.clone(),
                t.template.clone(),
            ]
        }),
    )?;
    write_file(path, &bytes)
}

/// Writes CSV or JSONL depending on the extension, mirroring the reader.
pub fn write_labeled_templates(
    path: &Path,
    templates: &[LabeledTemplate],
) -> Result<(), IngestError> {
    let bytes = if is_jsonl(path) {
        let mut out = Vec::new();
        for t in templates {
            let line = serde_json::json!({"template": t.template, "label": t.label.as_str()});
            out.extend_from_slice(line.to_string().as_bytes());
            out.push(b'\n');
        }
        out
    } else {
        csv_bytes(
            path,
            &["template", "label"],
            templates
                .iter()
                .map(|t| [t.template.as_str(), t.label.as_str()]),
        )?
    };
    write_file(path, &bytes)
}

pub fn write_community_cases(
    path: &Path,
    cases: &[CommunityCase],
    fields: &FieldMap,
) -> Result<(), IngestError> {
    let mut out = Vec::new();
    for c in cases {
        let mut obj = serde_json::Map::new();
        for (name, value) in [
            (&fields.case_id, &c.case_id),
            (&fields.title, &c.title),
            (&fields.problem, &c.problem),
            (&fields.log, &c.log),
            (&fields.resolution, &c.resolution),
        ] {
            obj.insert(name.clone(), Value::String(value.clone()));
        }
        out.extend_from_slice(Value::Object(obj).to_string().as_bytes());
        out.push(b'\n');
    }
    write_file(path, &out)
}

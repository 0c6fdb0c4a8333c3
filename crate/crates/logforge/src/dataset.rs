//! On-disk dataset artifacts: the instruction JSONL contract, the manifest,
//! held-out evaluation examples and the calibration files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use logforge_core::instruct::{DecompositionResult, PromptTemplate, BUILDER_VERSION};
use logforge_core::split::SplitSpec;
use logforge_core::{Capability, CommunityCase, InstructionPair};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One line of the instruction dataset. This is the whole contract that
/// training code may rely on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRow {
    pub id: String,
    pub capability: Capability,
    pub domain: String,
    pub instruction: String,
    pub input: String,
    pub response: String,
}

impl From<&InstructionPair> for DatasetRow {
    fn from(p: &InstructionPair) -> Self {
        DatasetRow {
            id: p.id.clone(),
            capability: p.capability,
            domain: p.domain.clone(),
            instruction: p.instruction.clone(),
            input: p.input.clone(),
            response: p.response.clone(),
        }
    }
}

/// A held-out example with its reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    pub capability: Capability,
    pub domain: String,
    /// Source record reference, e.g. `HDFS:1234`.
    pub source: String,
    pub instruction: String,
    pub input: String,
    pub reference: String,
    /// The log (or template) the example is about; parsing scores align
    /// against it.
    pub log: String,
}

impl EvalExample {
    /// The text sent to the model.
    pub fn prompt(&self) -> String {
        logforge_core::instruct::render_prompt(&self.instruction, &self.input)
    }
}

/// Replayable record of one split: the spec and the ids on each side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub capability: Capability,
    pub domain: String,
    pub spec: SplitSpec,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Template texts on the training side (anomaly splits only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub builder_version: String,
    pub seed: u64,
    pub total: usize,
    /// capability → domain → number of training pairs.
    pub counts: BTreeMap<Capability, BTreeMap<String, usize>>,
    pub test_counts: BTreeMap<Capability, BTreeMap<String, usize>>,
    #[serde(default)]
    pub calibration_removed: BTreeMap<Capability, usize>,
    pub prompt_templates: Vec<PromptTemplate>,
    pub splits: Vec<SplitRecord>,
}

impl Manifest {
    pub fn capability_total(&self, capability: Capability) -> usize {
        self.counts.get(&capability).map_or(0, |d| d.values().sum())
    }

    pub fn count(&self, capability: Capability, domain: &str) -> usize {
        self.counts
            .get(&capability)
            .and_then(|d| d.get(domain))
            .copied()
            .unwrap_or(0)
    }

    /// Training-side anomaly templates for `domain`.
    pub fn anomaly_train_templates(&self, domain: &str) -> BTreeSet<String> {
        self.splits
            .iter()
            .filter(|s| s.capability == Capability::Anomaly && s.domain == domain)
            .flat_map(|s| s.train_keys.iter().cloned())
            .collect()
    }
}

/// Everything that goes into the manifest besides the counts.
#[derive(Debug, Clone, Default)]
pub struct ManifestMeta {
    pub seed: u64,
    pub prompt_templates: Vec<PromptTemplate>,
    pub splits: Vec<SplitRecord>,
    pub calibration_removed: BTreeMap<Capability, usize>,
    pub test: Vec<EvalExample>,
}

fn ensure_parent(path: &Path) -> Result<(), DatasetError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(io_err(dir)),
        None => Ok(()),
    }
}

/// Serializes `rows` one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| DatasetError::Json {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    ensure_parent(path)?;
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    text.push('\n');
    ensure_parent(path)?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn tally<'a>(
    items: impl Iterator<Item = (Capability, &'a str)>,
) -> BTreeMap<Capability, BTreeMap<String, usize>> {
    let mut counts: BTreeMap<Capability, BTreeMap<String, usize>> = BTreeMap::new();
    for (c, d) in items {
        *counts
            .entry(c)
            .or_default()
            .entry(d.to_string())
            .or_default() += 1;
    }
    counts
}

/// Writes the instruction JSONL and returns the matching manifest.
///
/// Output depends only on `pairs` (in the given order) and `meta`, so
/// emitting the same inputs twice gives byte-identical files.
pub fn emit_dataset(
    pairs: &[InstructionPair],
    path: &Path,
    meta: &ManifestMeta,
) -> Result<Manifest, DatasetError> {
    let mut ids = BTreeSet::new();
    if let Some(dup) = pairs.iter().find(|p| !ids.insert(p.id.as_str())) {
        return Err(DatasetError::DuplicateId(dup.id.clone()));
    }
    let rows: Vec<DatasetRow> = pairs.iter().map(DatasetRow::from).collect();
    write_jsonl(path, &rows)?;
    Ok(Manifest {
        builder_version: BUILDER_VERSION.to_string(),
        seed: meta.seed,
        total: pairs.len(),
        counts: tally(pairs.iter().map(|p| (p.capability, p.domain.as_str()))),
        test_counts: tally(meta.test.iter().map(|e| (e.capability, e.domain.as_str()))),
        calibration_removed: meta.calibration_removed.clone(),
        prompt_templates: meta.prompt_templates.clone(),
        splits: meta.splits.clone(),
    })
}

/// Reads the manifest and held-out examples written by a build.
pub fn load_built(dir: &Path) -> Result<(Manifest, Vec<EvalExample>), DatasetError> {
    let manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let test = read_jsonl(&dir.join(TEST_FILE))?;
    Ok((manifest, test))
}

/// A line of the calibration review sheet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRow {
    pub pair_id: String,
    pub case_id: String,
    pub capability: Capability,
    pub instruction: String,
    pub input: String,
    pub response: String,
    pub case: CommunityCase,
}

pub fn review_rows(results: &[DecompositionResult], cases: &[CommunityCase]) -> Vec<ReviewRow> {
    let by_id: BTreeMap<&str, &CommunityCase> =
        cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let mut rows = Vec::new();
    for r in results {
        let Some(case) = by_id.get(r.case_id.as_str()) else {
            continue;
        };
        for t in &r.triples {
            rows.push(ReviewRow {
                pair_id: logforge_core::instruct::irs_pair_id(t.capability, &r.case_id),
                case_id: r.case_id.clone(),
                capability: t.capability,
                instruction: t.instruction.clone(),
                input: t.input.clone(),
                response: t.response.clone(),
                case: (*case).clone(),
            });
        }
    }
    rows
}

/// Newline-separated pair ids; blank lines and `#` comments are ignored.
pub fn read_exclusion_list(path: &Path) -> Result<BTreeSet<String>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(parse_exclusion_list(&text))
}

pub fn parse_exclusion_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// A community case set aside after its replies could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub case_id: String,
    pub attempts: u32,
    pub error: String,
}

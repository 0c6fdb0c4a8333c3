//! Records shared by every stage: raw logs, annotations, labeled templates,
//! community cases and the instruction pairs built from them.

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary anomaly label. `Abnormal` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }

    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    /// Accepts `normal`/`abnormal`/`0`/`1`, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("normal") || t == "0" {
            Ok(Label::Normal)
        } else if t.eq_ignore_ascii_case("abnormal") || t == "1" {
            Ok(Label::Abnormal)
        } else {
            Err(UnknownLabel(t.to_string()))
        }
    }
}

/// Anything that carries an anomaly label.
pub trait HasLabel {
    fn label(&self) -> Label;
}

impl HasLabel for Label {
    fn label(&self) -> Label {
        *self
    }
}

impl<T: HasLabel> HasLabel for (usize, T) {
    fn label(&self) -> Label {
        self.1.label()
    }
}

/// The five log-analysis capabilities an instruction pair can exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Parsing,
    Anomaly,
    Interpretation,
    RootCause,
    Solution,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::Parsing,
        Capability::Anomaly,
        Capability::Interpretation,
        Capability::RootCause,
        Capability::Solution,
    ];

    /// Capabilities produced by decomposing a community case, in triple order.
    pub const IRS: [Capability; 3] = [
        Capability::Interpretation,
        Capability::RootCause,
        Capability::Solution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Parsing => "parsing",
            Capability::Anomaly => "anomaly",
            Capability::Interpretation => "interpretation",
            Capability::RootCause => "root_cause",
            Capability::Solution => "solution",
        }
    }

    pub fn is_irs(self) -> bool {
        matches!(
            self,
            Capability::Interpretation | Capability::RootCause | Capability::Solution
        )
    }

    pub fn title(self) -> &'static str {
        match self {
            Capability::Parsing => "Log Parsing",
            Capability::Anomaly => "Anomaly Detection",
            Capability::Interpretation => "Log Interpretation",
            Capability::RootCause => "Root Cause Analysis",
            Capability::Solution => "Solution Recommendation",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown capability `{0}`")]
pub struct UnknownCapability(pub String);

impl FromStr for Capability {
    type Err = UnknownCapability;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase().replace('-', "_");
        Capability::ALL
            .into_iter()
            .find(|c| c.as_str() == t)
            .ok_or(UnknownCapability(t))
    }
}

/// One raw log line. `line_id` is 1-based and chronological within a domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub line_id: u64,
    pub content: String,
    pub domain: String,
}

/// Ground-truth template for the log with the same `line_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateAnnotation {
    pub line_id: u64,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTemplate {
    pub template: String,
    pub label: Label,
    pub domain: String,
}

impl HasLabel for LabeledTemplate {
    fn label(&self) -> Label {
        self.label
    }
}

/// A log-problem-resolution triplet taken from a technical forum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityCase {
    pub case_id: String,
    pub title: String,
    pub problem: String,
    pub log: String,
    pub resolution: String,
}

/// Where an instruction pair came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Source record reference, e.g. `HDFS:17` or a community case id.
    pub source: String,
    pub builder_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub id: String,
    pub capability: Capability,
    pub domain: String,
    pub instruction: String,
    pub input: String,
    pub response: String,
    pub provenance: Provenance,
}

/// Records that have a chronological position.
pub trait Chronological {
    fn line_id(&self) -> u64;
}

impl Chronological for LogRecord {
    fn line_id(&self) -> u64 {
        self.line_id
    }
}

impl<T> Chronological for (LogRecord, T) {
    fn line_id(&self) -> u64 {
        self.0.line_id
    }
}

impl HasLabel for (LogRecord, Label) {
    fn label(&self) -> Label {
        self.1
    }
}

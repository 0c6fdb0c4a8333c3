//! Turning split source records into instruction pairs, including the
//! decomposition round-trip for community cases.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use once_cell::race::OnceBox;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::record::{
    Capability, CommunityCase, InstructionPair, LabeledTemplate, LogRecord, Provenance,
    TemplateAnnotation,
};

pub const BUILDER_VERSION: &str = concat!("logforge-core/", env!("CARGO_PKG_VERSION"));

/// Substitution slot for the log in parsing and anomaly prompts.
pub const LOG_SLOT: &str = "{log}";

/// Substitution slot for the rendered case in the decomposition prompt.
pub const CASE_SLOT: &str = "{Input}";

pub const DECOMPOSITION_PROMPT: &str = "Assume you are a dedicated IT specialist focusing on log analysis for system O&M. The following real-world case includes a log, a title, a description of related user posted problem and a community solution. Your task is to decompose three INSTRUCTION-INPUT-RESPONSE pairs based on the real-world case. Requirement for INSTRUCTION: The topic of three instructions are interpretation of the log, root cause of the log and solution of the log, respectively. Organize each instruction to be a concise user query on the log. Requirement for INPUT: The three inputs are all the given log in the real-world case. If the original log is quite long, retain only necessary part. Requirement for RESPONSE: The three responses must properly meet the instructions. Organize your language to be precise and professional. Format your answer like this: INSTRUCTION 1: xxx\\n INPUT 1: xxx\\n RESPONSE 1: xxx\\n INSTRUCTION 2: xxx\\n INPUT 2: xxx\\n RESPONSE 2: xxx\\n INSTRUCTION 3: xxx\\n INPUT 3: xxx\\n RESPONSE 3: xxx. The case begins: {Input}";

const DEFAULT_PARSING_BODY: &str = "Convert the following log message into a log template. Keep every static token unchanged and replace each variable part (identifiers, numbers, paths, addresses and similar values) with the placeholder <*>. Reply with the template only.\nLog: {log}";

const DEFAULT_ANOMALY_BODY: &str = "Decide whether the following log indicates a system anomaly. Reply with exactly one word: normal or abnormal.\nLog: {log}";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuildError {
    #[error("prompt template `{0}` must contain exactly one {{log}} slot")]
    SlotMissing(String),
    #[error("prompt template `{name}` is for {actual}, expected {expected}")]
    WrongCapability {
        name: String,
        expected: Capability,
        actual: Capability,
    },
    #[error("exclusion list names unknown pair id `{0}`")]
    UnknownId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub capability: Capability,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        body: impl Into<String>,
        capability: Capability,
    ) -> Result<Self, BuildError> {
        let t = PromptTemplate {
            name: name.into(),
            body: body.into(),
            capability,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        let slots = self.body.matches(LOG_SLOT).count();
        let ok = if self.capability.is_irs() {
            slots <= 1
        } else {
            slots == 1
        };
        if ok {
            Ok(())
        } else {
            Err(BuildError::SlotMissing(self.name.clone()))
        }
    }

    pub fn default_parsing() -> Self {
        PromptTemplate {
            name: "parsing-simple".to_string(),
            body: DEFAULT_PARSING_BODY.to_string(),
            capability: Capability::Parsing,
        }
    }

    pub fn default_anomaly() -> Self {
        PromptTemplate {
            name: "anomaly-simple".to_string(),
            body: DEFAULT_ANOMALY_BODY.to_string(),
            capability: Capability::Anomaly,
        }
    }

    pub fn render(&self, log: &str) -> String {
        self.body.replacen(LOG_SLOT, log, 1)
    }

    fn expect(&self, capability: Capability) -> Result<(), BuildError> {
        if self.capability != capability {
            return Err(BuildError::WrongCapability {
                name: self.name.clone(),
                expected: capability,
                actual: self.capability,
            });
        }
        self.validate()
    }
}

/// The model-facing prompt for an instruction pair: instruction, blank line, input.
pub fn render_prompt(instruction: &str, input: &str) -> String {
    if input.is_empty() {
        instruction.to_string()
    } else {
        format!("{instruction}\n\n{input}")
    }
}

/// Short stable digest used to key pairs built from text-only sources.
pub fn short_digest(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(12);
    for b in &digest[..6] {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn provenance(source: String) -> Provenance {
    Provenance {
        source,
        builder_version: BUILDER_VERSION.to_string(),
    }
}

pub fn build_parsing_pairs(
    train: &[(LogRecord, TemplateAnnotation)],
    template: &PromptTemplate,
) -> Result<Vec<InstructionPair>, BuildError> {
    template.expect(Capability::Parsing)?;
    Ok(train
        .iter()
        .map(|(record, annotation)| InstructionPair {
            id: format!("parsing-{}-{}", record.domain, record.line_id),
            capability: Capability::Parsing,
            domain: record.domain.clone(),
            instruction: template.render(&record.content),
            input: String::new(),
            response: annotation.template.clone(),
            provenance: provenance(format!("{}:{}", record.domain, record.line_id)),
        })
        .collect())
}

pub fn anomaly_pair_id(template: &LabeledTemplate) -> String {
    format!(
        "anomaly-{}-{}",
        template.domain,
        short_digest(&template.template)
    )
}

pub fn build_anomaly_pairs(
    subset: &[LabeledTemplate],
    template: &PromptTemplate,
) -> Result<Vec<InstructionPair>, BuildError> {
    template.expect(Capability::Anomaly)?;
    Ok(subset
        .iter()
        .map(|t| InstructionPair {
            id: anomaly_pair_id(t),
            capability: Capability::Anomaly,
            domain: t.domain.clone(),
            instruction: template.render(&t.template),
            input: String::new(),
            response: t.label.as_str().to_string(),
            provenance: provenance(format!("{}:{}", t.domain, t.template)),
        })
        .collect())
}

/// The labeled sections that replace the `{Input}` slot.
pub fn render_case(case: &CommunityCase) -> String {
    format!(
        "\nTitle: {}\nProblem: {}\nLog: {}\nSolution: {}",
        case.title, case.problem, case.log, case.resolution
    )
}

pub fn render_decomposition_prompt(case: &CommunityCase) -> String {
    DECOMPOSITION_PROMPT.replacen(CASE_SLOT, &render_case(case), 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub capability: Capability,
    pub instruction: String,
    pub input: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub case_id: String,
    /// Interpretation, root cause, solution, in that order.
    pub triples: [Triple; 3],
    pub raw_reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum DecompositionError {
    #[error("reply is missing or has an empty `{missing_marker}` section")]
    MalformedReply { missing_marker: String },
    #[error("reply holds only {found} of 3 triples")]
    PartialReply { found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Instruction,
    Input,
    Response,
}

impl Field {
    fn from_word(w: &str) -> Option<Field> {
        if w.eq_ignore_ascii_case("instruction") {
            Some(Field::Instruction)
        } else if w.eq_ignore_ascii_case("input") {
            Some(Field::Input)
        } else if w.eq_ignore_ascii_case("response") {
            Some(Field::Response)
        } else {
            None
        }
    }

    fn name(self) -> &'static str {
        match self {
            Field::Instruction => "INSTRUCTION",
            Field::Input => "INPUT",
            Field::Response => "RESPONSE",
        }
    }
}

const EXPECTED: [(Field, u8); 9] = [
    (Field::Instruction, 1),
    (Field::Input, 1),
    (Field::Response, 1),
    (Field::Instruction, 2),
    (Field::Input, 2),
    (Field::Response, 2),
    (Field::Instruction, 3),
    (Field::Input, 3),
    (Field::Response, 3),
];

fn marker_regex() -> &'static Regex {
    static RE: OnceBox<Regex> = OnceBox::new();
    RE.get_or_init(|| {
        Box::new(
            Regex::new(r"(?i)\b(instruction|input|response)[ \t]*([1-3])[ \t]*[*_]*[ \t]*[:：]")
                .expect("marker regex compiles"),
        )
    })
}

fn clean_field(raw: &str) -> String {
    let decoration = |c: char| c.is_whitespace() || matches!(c, '*' | '_' | '#' | '>');
    let mut s = raw.trim_start_matches(decoration);
    loop {
        let trimmed = s
            .trim_end_matches(|c: char| decoration(c) || c == '-')
            .trim_end_matches("\\n");
        if trimmed.len() == s.len() {
            break;
        }
        s = trimmed;
    }
    let mut s = s.trim();
    if let Some(rest) = s.strip_prefix("```") {
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        s = body.trim_end().strip_suffix("```").unwrap_or(body).trim();
    }
    s.to_string()
}

/// Extracts the three (instruction, input, response) triples from a reply.
///
/// Markers are matched case-insensitively and in order; markdown bolding,
/// headings and extra whitespace around them are tolerated. An empty input
/// falls back to the case's own log.
pub fn parse_decomposition_reply(
    reply: &str,
    case: &CommunityCase,
) -> Result<DecompositionResult, DecompositionError> {
    let re = marker_regex();
    // (start of marker, end of marker) for each expected marker found in order.
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(9);
    for caps in re.captures_iter(reply) {
        let Some(&(field, k)) = EXPECTED.get(spans.len()) else {
            break;
        };
        let got_field = Field::from_word(&caps[1]);
        let got_k = caps[2].as_bytes()[0] - b'0';
        if got_field == Some(field) && got_k == k {
            let m = caps.get(0).expect("whole match");
            spans.push((m.start(), m.end()));
        }
    }

    let mut values: Vec<String> = Vec::with_capacity(9);
    for (i, &(_, end)) in spans.iter().enumerate() {
        let stop = spans.get(i + 1).map_or(reply.len(), |s| s.0);
        values.push(clean_field(&reply[end..stop]));
    }

    let missing = |i: usize| {
        let (field, k) = EXPECTED[i];
        format!("{} {}", field.name(), k)
    };
    if spans.len() < 9 {
        let complete = spans.len() / 3;
        let nonempty_complete = (0..complete)
            .take_while(|t| !values[t * 3].is_empty() && !values[t * 3 + 2].is_empty())
            .count();
        if spans.len().is_multiple_of(3) && complete > 0 && nonempty_complete == complete {
            return Err(DecompositionError::PartialReply { found: complete });
        }
        return Err(DecompositionError::MalformedReply {
            missing_marker: missing(spans.len()),
        });
    }
    for (i, v) in values.iter().enumerate() {
        if v.is_empty() && EXPECTED[i].0 != Field::Input {
            return Err(DecompositionError::MalformedReply {
                missing_marker: missing(i),
            });
        }
    }

    let triple = |t: usize| {
        let input = if values[t * 3 + 1].is_empty() {
            case.log.clone()
        } else {
            values[t * 3 + 1].clone()
        };
        Triple {
            capability: Capability::IRS[t],
            instruction: values[t * 3].clone(),
            input,
            response: values[t * 3 + 2].clone(),
        }
    };
    Ok(DecompositionResult {
        case_id: case.case_id.clone(),
        triples: [triple(0), triple(1), triple(2)],
        raw_reply: reply.to_string(),
    })
}

/// Writes triples back out in the reply grammar the decomposition prompt asks for.
pub fn serialize_reply(triples: &[Triple; 3]) -> String {
    let mut out = String::new();
    for (i, t) in triples.iter().enumerate() {
        let k = i + 1;
        let _ = write!(
            out,
            "INSTRUCTION {k}: {}\nINPUT {k}: {}\nRESPONSE {k}: {}\n",
            t.instruction, t.input, t.response
        );
    }
    out
}

pub fn irs_pair_id(capability: Capability, case_id: &str) -> String {
    format!("{}-{}", capability.as_str(), case_id)
}

/// One instruction pair per triple.
pub fn decomposition_pairs(result: &DecompositionResult, domain: &str) -> Vec<InstructionPair> {
    result
        .triples
        .iter()
        .map(|t| InstructionPair {
            id: irs_pair_id(t.capability, &result.case_id),
            capability: t.capability,
            domain: domain.to_string(),
            instruction: t.instruction.clone(),
            input: t.input.clone(),
            response: t.response.clone(),
            provenance: provenance(result.case_id.clone()),
        })
        .collect()
}

/// Removes excluded pairs; every excluded id must name an existing pair.
pub fn apply_calibration(
    pairs: Vec<InstructionPair>,
    exclusion: &BTreeSet<String>,
) -> Result<(Vec<InstructionPair>, usize), BuildError> {
    let known: BTreeSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    if let Some(unknown) = exclusion.iter().find(|id| !known.contains(id.as_str())) {
        return Err(BuildError::UnknownId(unknown.clone()));
    }
    let before = pairs.len();
    let kept: Vec<InstructionPair> = pairs
        .into_iter()
        .filter(|p| !exclusion.contains(&p.id))
        .collect();
    let removed = before - kept.len();
    Ok((kept, removed))
}

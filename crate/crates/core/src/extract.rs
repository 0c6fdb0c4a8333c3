//! Reading templates and verdicts out of free-form model replies.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use once_cell::race::OnceBox;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::canon::{Canonicalizer, PLACEHOLDER};
use crate::metrics::Confidence;
use crate::record::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Template,
    Verdict,
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub raw: String,
    pub normalized: String,
    pub kind: AnswerKind,
    pub confidence: Confidence,
}

impl ExtractedAnswer {
    /// The verdict carried by a `Verdict` answer.
    pub fn label(&self) -> Label {
        if self.normalized == Label::Abnormal.as_str() {
            Label::Abnormal
        } else {
            Label::Normal
        }
    }
}

fn label_prefix() -> &'static Regex {
    static RE: OnceBox<Regex> = OnceBox::new();
    RE.get_or_init(|| {
        Box::new(
            Regex::new(
                r"(?i)^[*_]*(?:the\s+)?(?:extracted\s+|parsed\s+|log\s+)?(?:template|output|answer|result)\s*(?:is)?\s*[*_]*\s*[:：][*_]*\s*",
            )
            .expect("label regex compiles"),
        )
    })
}

fn bullet() -> &'static Regex {
    static RE: OnceBox<Regex> = OnceBox::new();
    RE.get_or_init(|| {
        Box::new(Regex::new(r"^(?:[-*+>]\s+|\d+[.)]\s+)").expect("bullet regex compiles"))
    })
}

fn strip_wrapping(mut s: &str) -> &str {
    loop {
        let before = s;
        s = s.trim();
        if let Some(inner) = s.strip_prefix("**").and_then(|r| r.strip_suffix("**")) {
            s = inner;
        }
        for q in ['`', '"', '\'', '“'] {
            let close = if q == '“' { '”' } else { q };
            if s.len() >= 2 && s.starts_with(q) && s.ends_with(close) {
                let inner = &s[q.len_utf8()..s.len() - close.len_utf8()];
                if !inner.contains(q) && !inner.contains(close) {
                    s = inner;
                }
            }
        }
        if s == before {
            return s;
        }
    }
}

struct Candidate {
    text: String,
    labelled: bool,
}

fn candidates(reply: &str, canon: &Canonicalizer) -> Vec<Candidate> {
    let label = label_prefix();
    let bullet = bullet();
    let mut out = Vec::new();
    for line in reply.lines() {
        let mut s = line.trim();
        if s.is_empty() || s.starts_with("```") {
            continue;
        }
        if let Some(m) = bullet.find(s) {
            s = &s[m.end()..];
        }
        let stripped = strip_wrapping(s);
        let (body, labelled) = match label.find(stripped) {
            Some(m) => (&stripped[m.end()..], true),
            None => (stripped, false),
        };
        let body = strip_wrapping(body);
        if body.is_empty() {
            continue;
        }
        out.push(Candidate {
            text: canon.canonicalize(body),
            labelled,
        });
    }
    out
}

fn matches_log_shape(candidate: &str, log: &str) -> bool {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let l: Vec<&str> = log.split_whitespace().collect();
    if c.len() != l.len() || c.is_empty() {
        return false;
    }
    let agree = c
        .iter()
        .zip(&l)
        .filter(|(a, b)| a == b || a.contains(PLACEHOLDER))
        .count();
    2 * agree >= c.len()
}

/// Picks the most template-like line of `reply`.
///
/// A single-line reply is taken verbatim apart from placeholder spelling.
/// Otherwise lines holding `<*>` win (labelled lines first), then lines shaped
/// like the input log, then labelled lines; failing all that the first
/// non-empty line is returned with `Fallback` confidence.
pub fn extract_template(reply: &str, canon: &Canonicalizer, log: Option<&str>) -> ExtractedAnswer {
    let answer = |normalized: String, confidence| ExtractedAnswer {
        raw: reply.to_string(),
        normalized,
        kind: AnswerKind::Template,
        confidence,
    };
    let trimmed = reply.trim();
    if trimmed.is_empty() {
        return answer(String::new(), Confidence::Fallback);
    }

    let cands = candidates(reply, canon);
    let Some(first) = cands.first() else {
        return answer(trimmed.to_string(), Confidence::Fallback);
    };
    let with_placeholder = cands
        .iter()
        .filter(|c| c.text.contains(PLACEHOLDER))
        .min_by_key(|c| !c.labelled);
    if let Some(c) = with_placeholder {
        return answer(c.text.clone(), Confidence::Exact);
    }
    if let Some(log) = log {
        if let Some(c) = cands.iter().find(|c| matches_log_shape(&c.text, log)) {
            return answer(c.text.clone(), Confidence::Keyword);
        }
    }
    if let Some(c) = cands.iter().find(|c| c.labelled) {
        return answer(c.text.clone(), Confidence::Keyword);
    }
    answer(first.text.clone(), Confidence::Fallback)
}

const ANOMALY_WORDS: [&str; 5] = [
    "abnormal",
    "anomaly",
    "anomalous",
    "anomalies",
    "abnormality",
];

/// Reads a normal/abnormal verdict. Anomaly-family words take precedence over
/// "normal"; replies with neither default to normal with `Fallback` confidence.
pub fn extract_verdict(reply: &str) -> ExtractedAnswer {
    let lower = reply.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let (label, found) = if words.iter().any(|w| ANOMALY_WORDS.contains(w)) {
        (Label::Abnormal, true)
    } else if words.contains(&"normal") {
        (Label::Normal, true)
    } else {
        (Label::Normal, false)
    };
    let confidence = if !found {
        Confidence::Fallback
    } else if words.len() == 1 {
        Confidence::Exact
    } else {
        Confidence::Keyword
    };
    ExtractedAnswer {
        raw: reply.to_string(),
        normalized: label.as_str().to_string(),
        kind: AnswerKind::Verdict,
        confidence,
    }
}

/// Free-text answers are used as-is, trimmed.
pub fn extract_free_text(reply: &str) -> ExtractedAnswer {
    let normalized = reply.trim().to_string();
    let confidence = if normalized.is_empty() {
        Confidence::Fallback
    } else {
        Confidence::Exact
    };
    ExtractedAnswer {
        raw: reply.to_string(),
        normalized,
        kind: AnswerKind::FreeText,
        confidence,
    }
}

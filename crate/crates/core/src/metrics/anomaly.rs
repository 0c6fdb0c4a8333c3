//! Template- and session-level anomaly F1.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use super::parsing::Confusion;
use crate::record::Label;
use crate::split::LogSession;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnomalyMetricError {
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no prediction for template `{0}`")]
    MissingPrediction(String),
    #[error("session {0} has no members")]
    EmptySession(usize),
}

/// How confidently a verdict was read out of a model reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Exact,
    Keyword,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyPrediction {
    pub item_id: String,
    pub predicted: Label,
    pub extraction_confidence: Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
}

/// Binary confusion with `Abnormal` as the positive class.
pub fn anomaly_f1(gt: &[Label], pred: &[Label]) -> Result<AnomalyScore, AnomalyMetricError> {
    if gt.len() != pred.len() {
        return Err(AnomalyMetricError::LengthMismatch(gt.len(), pred.len()));
    }
    let mut c = Confusion::default();
    for (g, p) in gt.iter().zip(pred) {
        match (g.is_abnormal(), p.is_abnormal()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(AnomalyScore {
        f1: c.f1(),
        precision: c.precision(),
        recall: c.recall(),
        confusion: c,
    })
}

/// Lifts template verdicts to a session: abnormal iff any member is.
pub fn session_prediction<'a, F>(
    session: &LogSession,
    template_of: F,
    predictions: &BTreeMap<String, Label>,
) -> Result<Label, AnomalyMetricError>
where
    F: Fn(usize) -> &'a str,
{
    if session.is_empty() {
        return Err(AnomalyMetricError::EmptySession(session.session_id));
    }
    let mut verdict = Label::Normal;
    for &i in &session.member_indices {
        let t = template_of(i);
        match predictions.get(t) {
            Some(Label::Abnormal) => verdict = Label::Abnormal,
            Some(Label::Normal) => {}
            None => return Err(AnomalyMetricError::MissingPrediction(t.to_string())),
        }
    }
    Ok(verdict)
}

//! Model-assisted decomposition of community cases into instruction triples.

use logforge_core::instruct::{
    parse_decomposition_reply, render_decomposition_prompt, DecompositionResult,
};
use logforge_core::CommunityCase;
use serde::{Deserialize, Serialize};

use crate::dataset::QuarantineEntry;
use crate::gateway::{ChatRequest, Gateway, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    /// Extra attempts for a case whose reply does not parse.
    pub parse_retries: u32,
}

impl Default for DecomposeSettings {
    fn default() -> Self {
        DecomposeSettings {
            model: "gpt-4-turbo-preview".into(),
            temperature: 0.0,
            max_tokens: 2048,
            max_in_flight: 4,
            parse_retries: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecomposeOutcome {
    /// Successful cases, in input order.
    pub results: Vec<DecompositionResult>,
    /// Cases set aside, in input order.
    pub quarantine: Vec<QuarantineEntry>,
    /// Quarantined cases whose last failure was a transient transport error.
    pub transport_exhausted: usize,
}

impl DecomposeOutcome {
    pub fn triple_count(&self) -> usize {
        self.results.len() * 3
    }
}

pub fn decomposition_request(
    case: &CommunityCase,
    attempt: u32,
    settings: &DecomposeSettings,
) -> ChatRequest {
    ChatRequest::user(
        format!("decompose-{}-{attempt}", case.case_id),
        settings.model.clone(),
        render_decomposition_prompt(case),
    )
    .with_sampling(settings.temperature, settings.max_tokens)
}

/// Sends every case through the gateway. A reply that does not parse is
/// retried with the same prompt up to `parse_retries` times; after that, or
/// on any gateway error, the case goes to quarantine and the run continues.
pub fn decompose_cases(
    gateway: &Gateway,
    cases: &[CommunityCase],
    settings: &DecomposeSettings,
) -> Result<DecomposeOutcome, GatewayError> {
    let mut done: Vec<Option<Result<DecompositionResult, QuarantineEntry>>> =
        vec![None; cases.len()];
    let mut transient = vec![false; cases.len()];
    let mut pending: Vec<usize> = (0..cases.len()).collect();
    let attempts = settings.parse_retries + 1;

    for attempt in 1..=attempts {
        if pending.is_empty() {
            break;
        }
        let requests: Vec<ChatRequest> = pending
            .iter()
            .map(|&i| decomposition_request(&cases[i], attempt, settings))
            .collect();
        let replies = gateway.complete_batch(&requests, settings.max_in_flight)?;
        let mut still = Vec::new();
        for (&i, reply) in pending.iter().zip(replies) {
            let case = &cases[i];
            match reply {
                Ok(reply) => match parse_decomposition_reply(&reply.content, case) {
                    Ok(result) => done[i] = Some(Ok(result)),
                    Err(e) if attempt == attempts => {
                        done[i] = Some(Err(QuarantineEntry {
                            case_id: case.case_id.clone(),
                            attempts: attempt,
                            error: e.to_string(),
                        }))
                    }
                    Err(_) => still.push(i),
                },
                Err(e) => {
                    transient[i] = e.is_transient();
                    done[i] = Some(Err(QuarantineEntry {
                        case_id: case.case_id.clone(),
                        attempts: attempt,
                        error: e.to_string(),
                    }));
                }
            }
        }
        pending = still;
    }

    let mut outcome = DecomposeOutcome::default();
    for (i, slot) in done.into_iter().enumerate() {
        match slot.expect("every case is resolved after the last attempt") {
            Ok(r) => outcome.results.push(r),
            Err(q) => {
                outcome.transport_exhausted += usize::from(transient[i]);
                outcome.quarantine.push(q);
            }
        }
    }
    Ok(outcome)
}

//! BLEU and ROUGE-1/2/L on a 0-100 scale.
//!
//! ROUGE scores are recall against the reference (overlapping n-grams over
//! reference n-grams; LCS length over reference length) unless the F-measure
//! mode is selected. BLEU is the geometric mean of clipped n-gram precisions
//! for n = 1..4 times the brevity penalty. Orders for which the candidate
//! has no n-grams at all (candidates shorter than four tokens) are left out
//! of the mean, so an exact match always scores 100.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TextMetricError {
    #[error("reference has no {0}-grams")]
    EmptyReference(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeMode {
    #[default]
    Recall,
    FMeasure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TextMetricConfig {
    #[serde(default)]
    pub rouge_mode: RougeMode,
    /// Add-k smoothing for BLEU precisions; off when `None`.
    #[serde(default)]
    pub bleu_smoothing: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

/// Lowercases, splits on whitespace and trims punctuation from both ends of
/// every token. Tokens that are pure punctuation disappear.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Multiset of n-grams; the total count is `max(0, len - n + 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramProfile<'a> {
    pub n: usize,
    pub counts: BTreeMap<&'a [String], usize>,
}

impl<'a> NGramProfile<'a> {
    pub fn new(tokens: &'a [String], n: usize) -> Self {
        let mut counts = BTreeMap::new();
        if n > 0 {
            for gram in tokens.windows(n) {
                *counts.entry(gram).or_insert(0) += 1;
            }
        }
        NGramProfile { n, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Σ min(count here, count there) over shared n-grams.
    pub fn clipped_overlap(&self, other: &NGramProfile<'_>) -> usize {
        self.counts
            .iter()
            .map(|(g, &c)| c.min(other.counts.get(g).copied().unwrap_or(0)))
            .sum()
    }
}

fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn rouge_n_tokens(
    gen: &[String],
    reference: &[String],
    n: usize,
    mode: RougeMode,
) -> Result<f64, TextMetricError> {
    let r = NGramProfile::new(reference, n);
    let ref_total = r.total();
    if ref_total == 0 {
        return Err(TextMetricError::EmptyReference(n));
    }
    let g = NGramProfile::new(gen, n);
    let overlap = r.clipped_overlap(&g) as f64;
    let recall = overlap / ref_total as f64;
    Ok(100.0
        * match mode {
            RougeMode::Recall => recall,
            RougeMode::FMeasure => {
                let gen_total = g.total();
                let p = if gen_total == 0 {
                    0.0
                } else {
                    overlap / gen_total as f64
                };
                f_measure(p, recall)
            }
        })
}

pub fn rouge_n(generated: &str, reference: &str, n: usize) -> Result<f64, TextMetricError> {
    rouge_n_with(generated, reference, n, RougeMode::Recall)
}

pub fn rouge_n_with(
    generated: &str,
    reference: &str,
    n: usize,
    mode: RougeMode,
) -> Result<f64, TextMetricError> {
    rouge_n_tokens(&tokenize(generated), &tokenize(reference), n, mode)
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    let l = prev[b.len()];
    debug_assert!(l <= a.len().min(b.len()));
    l
}

fn rouge_l_tokens(
    gen: &[String],
    reference: &[String],
    mode: RougeMode,
) -> Result<f64, TextMetricError> {
    if reference.is_empty() {
        return Err(TextMetricError::EmptyReference(1));
    }
    let lcs = lcs_length(gen, reference) as f64;
    let recall = lcs / reference.len() as f64;
    Ok(100.0
        * match mode {
            RougeMode::Recall => recall,
            RougeMode::FMeasure => {
                let p = if gen.is_empty() {
                    0.0
                } else {
                    lcs / gen.len() as f64
                };
                f_measure(p, recall)
            }
        })
}

pub fn rouge_l(generated: &str, reference: &str) -> Result<f64, TextMetricError> {
    rouge_l_with(generated, reference, RougeMode::Recall)
}

pub fn rouge_l_with(
    generated: &str,
    reference: &str,
    mode: RougeMode,
) -> Result<f64, TextMetricError> {
    rouge_l_tokens(&tokenize(generated), &tokenize(reference), mode)
}

fn bleu_tokens(gen: &[String], reference: &[String], smoothing: Option<f64>) -> f64 {
    if gen.is_empty() {
        return 0.0;
    }
    let orders = gen.len().min(4);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let g = NGramProfile::new(gen, n);
        let r = NGramProfile::new(reference, n);
        let clipped = g.clipped_overlap(&r) as f64;
        let total = g.total() as f64;
        let p = match smoothing {
            Some(k) => (clipped + k) / (total + k),
            None => clipped / total,
        };
        if p <= 0.0 {
            return 0.0;
        }
        log_sum += libm::log(p);
    }
    let (c, r) = (gen.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { libm::exp(1.0 - r / c) };
    100.0 * bp * libm::exp(log_sum / orders as f64)
}

pub fn bleu(generated: &str, reference: &str) -> f64 {
    bleu_with(generated, reference, None)
}

pub fn bleu_with(generated: &str, reference: &str, smoothing: Option<f64>) -> f64 {
    bleu_tokens(&tokenize(generated), &tokenize(reference), smoothing)
}

/// All four scores with one tokenization. Fails only on an empty reference.
pub fn score_text(
    generated: &str,
    reference: &str,
    config: &TextMetricConfig,
) -> Result<TextScores, TextMetricError> {
    let g = tokenize(generated);
    let r = tokenize(reference);
    Ok(TextScores {
        bleu: bleu_tokens(&g, &r, config.bleu_smoothing),
        rouge1: rouge_n_tokens(&g, &r, 1, config.rouge_mode)?,
        // A one-token reference has no bigrams: only an exact match earns them.
        rouge2: match rouge_n_tokens(&g, &r, 2, config.rouge_mode) {
            Err(TextMetricError::EmptyReference(_)) if !r.is_empty() => {
                if g == r {
                    100.0
                } else {
                    0.0
                }
            }
            other => other?,
        },
        rouge_l: rouge_l_tokens(&g, &r, config.rouge_mode)?,
    })
}

//! Scoring functions for the three evaluation families.

pub mod anomaly;
pub mod parsing;
pub mod text;

pub use anomaly::{anomaly_f1, session_prediction, AnomalyPrediction, AnomalyScore, Confidence};
pub use parsing::{
    f1_from_confusion, rand_index, rand_index_keys, token_confusion, ClusterAssignment, Confusion,
};
pub use text::{bleu, rouge_l, rouge_n, score_text, TextMetricConfig, TextScores};

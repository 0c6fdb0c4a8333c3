//! Coarse (RandIndex) and fine (token-level F1) parsing scores.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::canon::is_variable;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParsingMetricError {
    #[error("assignments differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("assignments list different item ids at position {0}")]
    ItemMismatch(usize),
    #[error("ground-truth template has {template} tokens but the log has {log}")]
    GtAlignmentFailure { log: usize, template: usize },
}

/// Token-level confusion counts; the positive class is "variable".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub const fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Confusion { tp, fp, fn_, tn }
    }

    /// `tp / (tp + fp)`, or 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, or 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_from_confusion(self)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion::new(
            self.tp + o.tp,
            self.fp + o.fp,
            self.fn_ + o.fn_,
            self.tn + o.tn,
        )
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        *self = *self + o;
    }
}

impl core::iter::Sum for Confusion {
    fn sum<I: Iterator<Item = Confusion>>(iter: I) -> Confusion {
        iter.fold(Confusion::default(), Add::add)
    }
}

/// Harmonic mean of precision and recall. No positives at all, predicted or
/// actual, counts as a perfect score.
pub fn f1_from_confusion(c: &Confusion) -> f64 {
    if c.tp == 0 && c.fp == 0 && c.fn_ == 0 {
        return 1.0;
    }
    let (p, r) = (c.precision(), c.recall());
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Items paired with the cluster key each one was assigned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment<K> {
    pub item_ids: Vec<u64>,
    pub labels: Vec<K>,
}

impl<K: Ord> ClusterAssignment<K> {
    pub fn new(item_ids: Vec<u64>, labels: Vec<K>) -> Result<Self, ParsingMetricError> {
        if item_ids.len() != labels.len() {
            return Err(ParsingMetricError::LengthMismatch(
                item_ids.len(),
                labels.len(),
            ));
        }
        Ok(ClusterAssignment { item_ids, labels })
    }
}

fn pairs(n: u64) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

/// RandIndex over two clusterings given as parallel key lists, via the
/// contingency table.
pub fn rand_index_keys<A: Ord, B: Ord>(gt: &[A], pred: &[B]) -> Result<f64, ParsingMetricError> {
    if gt.len() != pred.len() {
        return Err(ParsingMetricError::LengthMismatch(gt.len(), pred.len()));
    }
    let n = gt.len() as u64;
    if n <= 1 {
        return Ok(1.0);
    }
    let mut joint: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (a, b) in gt.iter().zip(pred) {
        *joint.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let same_both: u128 = joint.values().map(|&c| pairs(c)).sum();
    let same_gt: u128 = rows.values().map(|&c| pairs(c)).sum();
    let same_pred: u128 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    // same-same pairs plus different-different pairs
    let agree = total + 2 * same_both - same_gt - same_pred;
    Ok(agree as f64 / total as f64)
}

pub fn rand_index<A: Ord, B: Ord>(
    gt: &ClusterAssignment<A>,
    pred: &ClusterAssignment<B>,
) -> Result<f64, ParsingMetricError> {
    if gt.item_ids.len() != pred.item_ids.len() {
        return Err(ParsingMetricError::LengthMismatch(
            gt.item_ids.len(),
            pred.item_ids.len(),
        ));
    }
    if let Some(i) = gt
        .item_ids
        .iter()
        .zip(&pred.item_ids)
        .position(|(a, b)| a != b)
    {
        return Err(ParsingMetricError::ItemMismatch(i));
    }
    rand_index_keys(&gt.labels, &pred.labels)
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
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
    prev[b.len()]
}

/// Per-token confusion of a predicted template against the ground truth.
///
/// Equal lengths compare position by position. Otherwise static tokens are
/// aligned by their longest common subsequence (each aligned pair counts as a
/// true negative) and every variable on either side is unaligned.
pub fn token_confusion(
    log_tokens: &[&str],
    gt_tokens: &[&str],
    pred_tokens: &[&str],
) -> Result<Confusion, ParsingMetricError> {
    if log_tokens.len() != gt_tokens.len() {
        return Err(ParsingMetricError::GtAlignmentFailure {
            log: log_tokens.len(),
            template: gt_tokens.len(),
        });
    }
    let mut c = Confusion::default();
    if gt_tokens.len() == pred_tokens.len() {
        for (g, p) in gt_tokens.iter().zip(pred_tokens) {
            match (is_variable(g), is_variable(p)) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        return Ok(c);
    }
    let gt_static: Vec<&str> = gt_tokens
        .iter()
        .copied()
        .filter(|t| !is_variable(t))
        .collect();
    let pred_static: Vec<&str> = pred_tokens
        .iter()
        .copied()
        .filter(|t| !is_variable(t))
        .collect();
    c.tn = lcs_len(&gt_static, &pred_static) as u64;
    c.fn_ = (gt_tokens.len() - gt_static.len()) as u64;
    c.fp = (pred_tokens.len() - pred_static.len()) as u64;
    Ok(c)
}

/// Whitespace-tokenizing wrapper over [`token_confusion`].
pub fn template_confusion(
    log: &str,
    gt: &str,
    pred: &str,
) -> Result<Confusion, ParsingMetricError> {
    let log: Vec<&str> = log.split_whitespace().collect();
    let gt: Vec<&str> = gt.split_whitespace().collect();
    let pred: Vec<&str> = pred.split_whitespace().collect();
    token_confusion(&log, &gt, &pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index_keys(&["A", "A"], &["X", "X"]).unwrap(), 1.0);
        assert_eq!(
            rand_index_keys(&["A", "A", "B", "B"], &["X", "Y", "Y", "Y"]).unwrap(),
            0.5
        );
        assert_eq!(rand_index_keys(&["A", "B"], &["X", "X"]).unwrap(), 0.0);
        assert_eq!(rand_index_keys(&["A"], &["Q"]).unwrap(), 1.0);
        assert_eq!(
            rand_index_keys(&["A"], &["Q", "R"]).unwrap_err(),
            ParsingMetricError::LengthMismatch(1, 2)
        );
    }

    #[test]
    fn rand_index_checks_item_ids() {
        let gt = ClusterAssignment::new(vec![1, 2], vec!["a", "a"]).unwrap();
        let pred = ClusterAssignment::new(vec![1, 3], vec!["x", "x"]).unwrap();
        assert_eq!(
            rand_index(&gt, &pred).unwrap_err(),
            ParsingMetricError::ItemMismatch(1)
        );
        assert!(ClusterAssignment::new(vec![1], vec!["a", "b"]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let log = ["Connection", "from", "10.0.0.1", "closed"];
        let gt = ["Connection", "from", "<*>", "closed"];
        assert_eq!(
            token_confusion(&log, &gt, &["Connection", "from", "<*>", "<*>"]).unwrap(),
            Confusion::new(1, 1, 0, 2)
        );
        assert_eq!(
            token_confusion(&log, &gt, &gt).unwrap(),
            Confusion::new(1, 0, 0, 3)
        );
        assert_eq!(
            token_confusion(&["a", "b", "c"], &["a", "<*>", "c"], &["a", "c"]).unwrap(),
            Confusion::new(0, 0, 1, 2)
        );
        assert_eq!(
            token_confusion(&["a", "b"], &["a", "b", "<*>"], &["a", "b"]).unwrap_err(),
            ParsingMetricError::GtAlignmentFailure {
                log: 2,
                template: 3
            }
        );
    }

    #[test]
    fn f1_examples() {
        let c = Confusion::new(1, 1, 0, 2);
        assert_eq!(c.precision(), 0.5);
        assert_eq!(c.recall(), 1.0);
        assert!((f1_from_confusion(&c) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_from_confusion(&Confusion::new(0, 0, 0, 9)), 1.0);
        assert_eq!(f1_from_confusion(&Confusion::new(0, 3, 2, 0)), 0.0);
    }

    proptest! {
        #[test]
        fn rand_index_symmetric_and_relabel_invariant(
            a in proptest::collection::vec(0u8..4, 0..30),
            b in proptest::collection::vec(0u8..4, 0..30),
        ) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            let ab = rand_index_keys(a, b).unwrap();
            prop_assert_eq!(ab, rand_index_keys(b, a).unwrap());
            let relabeled: Vec<u8> = a.iter().map(|x| 10 - x).collect();
            prop_assert_eq!(ab, rand_index_keys(&relabeled, b).unwrap());
            prop_assert_eq!(rand_index_keys(a, a).unwrap(), 1.0);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn confusion_is_additive(
            recs in proptest::collection::vec((0u64..5, 0u64..5, 0u64..5, 0u64..5), 1..10)
        ) {
            let total: Confusion = recs.iter().map(|&(a, b, c, d)| Confusion::new(a, b, c, d)).sum();
            prop_assert_eq!(total.tp, recs.iter().map(|r| r.0).sum::<u64>());
            prop_assert_eq!(total.tn, recs.iter().map(|r| r.3).sum::<u64>());
            let f = total.f1();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}

//! Split and grouping disciplines: chronological prefixes, label-balanced
//! random subsets, seeded ratio splits and fixed-window sessions.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ratio::Fraction;
use crate::record::{Chronological, HasLabel, Label};

/// Session window used for BGL/Spirit session-level evaluation.
pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("records are not in chronological order at position {position}")]
    UnorderedInput { position: usize },
    #[error("need {needed} {label} items but only {available} are available")]
    InsufficientClass {
        label: Label,
        needed: usize,
        available: usize,
    },
    #[error("requested {count} items from a list of {available}")]
    CountTooLarge { count: usize, available: usize },
    #[error("cannot sessionize an empty record list")]
    EmptyInput,
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("invalid split spec: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Chronological,
    BalancedRandom,
    RatioRandom,
}

/// A fully replayable description of one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub train_fraction: Fraction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abnormal_fraction_target: Option<Fraction>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        match (self.kind, self.abnormal_fraction_target) {
            (SplitKind::BalancedRandom, None) => Err(SplitError::InvalidSpec(
                "balanced_random requires abnormal_fraction_target",
            )),
            (SplitKind::Chronological | SplitKind::RatioRandom, Some(_)) => Err(
                SplitError::InvalidSpec("abnormal_fraction_target only applies to balanced_random"),
            ),
            _ => Ok(()),
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// First `floor(fraction · N)` records train, the rest test.
pub fn chronological_split<T: Chronological>(
    records: &[T],
    fraction: Fraction,
) -> Result<(&[T], &[T]), SplitError> {
    if let Some(position) = records
        .windows(2)
        .position(|w| w[0].line_id() >= w[1].line_id())
    {
        return Err(SplitError::UnorderedInput {
            position: position + 1,
        });
    }
    Ok(records.split_at(fraction.floor_mul(records.len())))
}

/// Draws `count` items of which `round(count · abnormal_fraction)` are abnormal.
///
/// Both returned lists keep the input order; the selection depends only on
/// `(items, count, abnormal_fraction, seed)`.
pub fn balanced_random_subset<T: HasLabel + Clone>(
    items: &[T],
    count: usize,
    abnormal_fraction: Fraction,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), SplitError> {
    if count > items.len() {
        return Err(SplitError::CountTooLarge {
            count,
            available: items.len(),
        });
    }
    let want_abnormal = abnormal_fraction.round_mul(count);
    let want_normal = count - want_abnormal;

    let (mut abnormal, mut normal): (Vec<usize>, Vec<usize>) =
        (0..items.len()).partition(|&i| items[i].label().is_abnormal());
    for (label, needed, available) in [
        (Label::Abnormal, want_abnormal, abnormal.len()),
        (Label::Normal, want_normal, normal.len()),
    ] {
        if needed > available {
            return Err(SplitError::InsufficientClass {
                label,
                needed,
                available,
            });
        }
    }

    let mut rng = rng(seed);
    abnormal.shuffle(&mut rng);
    normal.shuffle(&mut rng);
    let chosen: BTreeSet<usize> = abnormal[..want_abnormal]
        .iter()
        .chain(&normal[..want_normal])
        .copied()
        .collect();

    let mut subset = Vec::with_capacity(count);
    let mut remainder = Vec::with_capacity(items.len() - count);
    for (i, item) in items.iter().enumerate() {
        if chosen.contains(&i) {
            subset.push(item.clone());
        } else {
            remainder.push(item.clone());
        }
    }
    Ok((subset, remainder))
}

/// Seeded shuffle, then the first `floor(train_fraction · N)` go to train.
///
/// Both halves are returned in input order.
pub fn ratio_split<T: Clone>(items: &[T], train_fraction: Fraction, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng(seed));
    let n_train = train_fraction.floor_mul(items.len());
    let train_idx: BTreeSet<usize> = order[..n_train].iter().copied().collect();

    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(items.len() - n_train);
    for (i, item) in items.iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(item.clone());
        } else {
            test.push(item.clone());
        }
    }
    (train, test)
}

/// A run of chronologically adjacent records judged as one unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSession {
    pub session_id: usize,
    pub member_indices: Vec<usize>,
    pub label: Label,
}

impl LogSession {
    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }
}

/// Non-overlapping windows of `window` records; the trailing partial window
/// is kept. A session is abnormal iff any member is.
pub fn build_sessions<T: HasLabel>(
    records: &[T],
    window: usize,
) -> Result<Vec<LogSession>, SplitError> {
    if window == 0 {
        return Err(SplitError::ZeroWindow);
    }
    if records.is_empty() {
        return Err(SplitError::EmptyInput);
    }
    let sessions = records
        .chunks(window)
        .enumerate()
        .map(|(session_id, chunk)| {
            let start = session_id * window;
            let label = if chunk.iter().any(|r| r.label().is_abnormal()) {
                Label::Abnormal
            } else {
                Label::Normal
            };
            LogSession {
                session_id,
                member_indices: (start..start + chunk.len()).collect(),
                label,
            }
        })
        .collect();
    Ok(sessions)
}

/// Drops sessions that contain any record whose template was seen in training.
/// Returns the kept sessions (order preserved) and the number dropped.
pub fn exclude_overlap<'a, F>(
    sessions: Vec<LogSession>,
    template_of: F,
    training_templates: &BTreeSet<alloc::string::String>,
) -> (Vec<LogSession>, usize)
where
    F: Fn(usize) -> &'a str,
{
    let before = sessions.len();
    let kept: Vec<LogSession> = sessions
        .into_iter()
        .filter(|s| {
            !s.member_indices
                .iter()
                .any(|&i| training_templates.contains(template_of(i)))
        })
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{LabeledTemplate, LogRecord};
    use alloc::format;
    use alloc::string::{String, ToString};
    use alloc::vec;
    use proptest::prelude::*;

    fn records(n: usize) -> Vec<LogRecord> {
        (1..=n as u64)
            .map(|i| LogRecord {
                line_id: i,
                content: format!("log {i}"),
                domain: "HDFS".to_string(),
            })
            .collect()
    }

    fn frac(x: f64) -> Fraction {
        Fraction::from_f64(x).unwrap()
    }

    fn templates(n: usize, abnormal: usize) -> Vec<LabeledTemplate> {
        (0..n)
            .map(|i| LabeledTemplate {
                template: format!("t{i}"),
                label: if i < abnormal {
                    Label::Abnormal
                } else {
                    Label::Normal
                },
                domain: "BGL".to_string(),
            })
            .collect()
    }

    #[test]
    fn chronological_examples() {
        let r = records(2000);
        let (train, test) = chronological_split(&r, frac(0.1)).unwrap();
        assert_eq!((train.len(), test.len()), (200, 1800));
        assert_eq!(train[199].line_id, 200);

        let (train, test) = chronological_split(&r, Fraction::ZERO).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 2000);

        let r = records(7);
        let (train, test) = chronological_split(&r, frac(0.5)).unwrap();
        assert_eq!((train.len(), test.len()), (3, 4));
    }

    #[test]
    fn chronological_rejects_unordered() {
        let mut r = records(5);
        r.swap(1, 3);
        assert_eq!(
            chronological_split(&r, frac(0.5)).unwrap_err(),
            SplitError::UnorderedInput { position: 2 }
        );
    }

    #[test]
    fn balanced_subset_bgl_shape() {
        let items = templates(1766, 177);
        let (subset, rest) = balanced_random_subset(&items, 194, frac(0.1), 7).unwrap();
        assert_eq!(subset.len(), 194);
        assert_eq!(rest.len(), 1572);
        assert_eq!(subset.iter().filter(|t| t.label.is_abnormal()).count(), 19);
    }

    #[test]
    fn balanced_subset_small_fixture_is_reproducible() {
        let items = templates(10, 2);
        let a = balanced_random_subset(&items, 5, frac(0.2), 42).unwrap();
        let b = balanced_random_subset(&items, 5, frac(0.2), 42).unwrap();
        assert_eq!(a, b);
        let abnormal = a.0.iter().filter(|t| t.label.is_abnormal()).count();
        assert_eq!((abnormal, 5 - abnormal), (1, 4));
    }

    #[test]
    fn balanced_subset_whole_corpus() {
        let items = templates(10, 2);
        let (subset, rest) = balanced_random_subset(&items, 10, frac(0.2), 1).unwrap();
        assert_eq!(subset, items);
        assert!(rest.is_empty());
    }

    #[test]
    fn balanced_subset_errors() {
        let items = templates(10, 1);
        assert_eq!(
            balanced_random_subset(&items, 10, frac(0.5), 0).unwrap_err(),
            SplitError::InsufficientClass {
                label: Label::Abnormal,
                needed: 5,
                available: 1
            }
        );
        assert!(matches!(
            balanced_random_subset(&items, 11, frac(0.1), 0),
            Err(SplitError::CountTooLarge { .. })
        ));
    }

    #[test]
    fn ratio_split_examples() {
        let items: Vec<u32> = (0..376).collect();
        let (train, test) = ratio_split(&items, frac(0.8), 3);
        assert_eq!((train.len(), test.len()), (300, 76));
        let (train, test) = ratio_split(&items, Fraction::ONE, 3);
        assert_eq!((train.len(), test.len()), (376, 0));

        let five: Vec<u32> = (0..5).collect();
        let a = ratio_split(&five, frac(0.8), 1);
        let b = ratio_split(&five, frac(0.8), 2);
        assert_eq!((a.0.len(), a.1.len()), (4, 1));
        assert_eq!((b.0.len(), b.1.len()), (4, 1));
        // Membership differs for at least one seed among a handful.
        let differs = (2..10).any(|s| ratio_split(&five, frac(0.8), s).1 != a.1);
        assert!(differs);
    }

    #[test]
    fn sessions_examples() {
        let labels = vec![Label::Normal; 250];
        let s = build_sessions(&labels, 100).unwrap();
        assert_eq!(
            s.iter().map(LogSession::len).collect::<Vec<_>>(),
            vec![100, 100, 50]
        );

        let mut labels = vec![Label::Normal; 100];
        labels[57] = Label::Abnormal;
        assert_eq!(
            build_sessions(&labels, 100).unwrap()[0].label,
            Label::Abnormal
        );

        let labels = vec![Label::Normal; 400];
        let s = build_sessions(&labels, 100).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|s| s.label == Label::Normal));

        assert_eq!(
            build_sessions::<Label>(&[], 100).unwrap_err(),
            SplitError::EmptyInput
        );
        assert_eq!(
            build_sessions(&labels, 0).unwrap_err(),
            SplitError::ZeroWindow
        );
    }

    #[test]
    fn overlap_exclusion() {
        let labels = vec![Label::Normal; 6];
        let sessions = build_sessions(&labels, 2).unwrap();
        let tmpl = ["a", "b", "c", "d", "e", "f"];
        let none: BTreeSet<String> = BTreeSet::new();
        let (kept, dropped) = exclude_overlap(sessions.clone(), |i| tmpl[i], &none);
        assert_eq!((kept.len(), dropped), (3, 0));

        let mid: BTreeSet<String> = ["d".to_string()].into();
        let (kept, dropped) = exclude_overlap(sessions.clone(), |i| tmpl[i], &mid);
        assert_eq!(dropped, 1);
        assert_eq!(
            kept.iter().map(|s| s.session_id).collect::<Vec<_>>(),
            vec![0, 2]
        );

        let all: BTreeSet<String> = ["a", "c", "f"].iter().map(|s| s.to_string()).collect();
        let (kept, dropped) = exclude_overlap(sessions, |i| tmpl[i], &all);
        assert!(kept.is_empty());
        assert_eq!(dropped, 3);
    }

    #[test]
    fn spec_validation() {
        let ok = SplitSpec {
            kind: SplitKind::BalancedRandom,
            train_fraction: frac(0.1),
            abnormal_fraction_target: Some(frac(0.1)),
            seed: 1,
        };
        assert!(ok.validate().is_ok());
        let bad = SplitSpec {
            kind: SplitKind::Chronological,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let missing = SplitSpec {
            abnormal_fraction_target: None,
            ..ok
        };
        assert!(missing.validate().is_err());
    }

    fn sorted<T: Ord + Clone>(mut v: Vec<T>) -> Vec<T> {
        v.sort();
        v
    }

    proptest! {
        #[test]
        fn ratio_split_partitions(n in 0usize..60, f in 0u64..=100, seed: u64) {
            let items: Vec<usize> = (0..n).collect();
            let (train, test) = ratio_split(&items, Fraction::new(f, 100).unwrap(), seed);
            let mut all = train.clone();
            all.extend(test.iter().copied());
            prop_assert_eq!(sorted(all), items.clone());
            prop_assert_eq!(train.len(), (n * f as usize) / 100);
            prop_assert_eq!(ratio_split(&items, Fraction::new(f, 100).unwrap(), seed), (train, test));
        }

        #[test]
        fn balanced_subset_partitions(n in 1usize..60, abn in 0usize..60, count in 0usize..60, seed: u64) {
            let abn = abn.min(n);
            let count = count.min(n);
            let items = templates(n, abn);
            if let Ok((subset, rest)) = balanced_random_subset(&items, count, frac(0.1), seed) {
                prop_assert_eq!(subset.len(), count);
                prop_assert_eq!(
                    subset.iter().filter(|t| t.label.is_abnormal()).count(),
                    frac(0.1).round_mul(count)
                );
                let mut all: Vec<String> = subset.iter().chain(&rest).map(|t| t.template.clone()).collect();
                all.sort();
                let mut want: Vec<String> = items.iter().map(|t| t.template.clone()).collect();
                want.sort();
                prop_assert_eq!(all, want);
            }
        }

        #[test]
        fn sessions_cover_and_label(labels in proptest::collection::vec(any::<bool>(), 1..400), window in 1usize..120) {
            let labels: Vec<Label> = labels.into_iter().map(|b| if b { Label::Abnormal } else { Label::Normal }).collect();
            let sessions = build_sessions(&labels, window).unwrap();
            prop_assert_eq!(sessions.iter().map(LogSession::len).sum::<usize>(), labels.len());
            for s in &sessions[..sessions.len() - 1] {
                prop_assert_eq!(s.len(), window);
            }
            for s in &sessions {
                let any = s.member_indices.iter().any(|&i| labels[i] == Label::Abnormal);
                prop_assert_eq!(s.label == Label::Abnormal, any);
                prop_assert!(s.member_indices.windows(2).all(|w| w[1] == w[0] + 1));
            }
        }

        #[test]
        fn adding_abnormal_never_clears_label(mut labels in proptest::collection::vec(any::<bool>(), 1..50), at in 0usize..50) {
            let at = at % labels.len();
            let to_labels = |v: &[bool]| v.iter().map(|&b| if b { Label::Abnormal } else { Label::Normal }).collect::<Vec<_>>();
            let before = build_sessions(&to_labels(&labels), 10).unwrap();
            labels[at] = true;
            let after = build_sessions(&to_labels(&labels), 10).unwrap();
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(!(b.label == Label::Abnormal && a.label == Label::Normal));
            }
        }
    }
}

//! Fixed-depth prefix-tree online log parser.
//!
//! Logs are routed by token count, then by their leading tokens (tokens that
//! contain digits go to a shared `<*>` child), and finally matched against the
//! groups stored at the leaf. A log joins the most similar group when the
//! similarity reaches the threshold; positions that disagree become `<*>`.
//!
//! ```text
//!              root
//!               |
//!              [4]            token count
//!               |
//!            "Node"           first token
//!               |
//!             "<*>"           second token (digits)
//!            /     \
//!  [Node <*> is online]  [Node <*> going offline]
//! ```

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canon::{is_variable, PLACEHOLDER};
use crate::record::LogRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrainConfig {
    /// Tree depth including the root and length levels; at least 3.
    pub depth: usize,
    pub similarity_threshold: f64,
    pub max_children: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        DrainConfig {
            depth: 4,
            similarity_threshold: 0.4,
            max_children: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DrainError {
    #[error("depth must be at least 3, got {0}")]
    Depth(usize),
    #[error("similarity threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("max_children must be positive")]
    MaxChildren,
    #[error("token lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

impl DrainConfig {
    pub fn validate(&self) -> Result<(), DrainError> {
        if self.depth < 3 {
            return Err(DrainError::Depth(self.depth));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return Err(DrainError::Threshold(self.similarity_threshold));
        }
        if self.max_children == 0 {
            return Err(DrainError::MaxChildren);
        }
        Ok(())
    }
}

/// Share of positions whose tokens agree; a `<*>` on either side agrees.
pub fn similarity<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> Result<f64, DrainError> {
    if a.len() != b.len() {
        return Err(DrainError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let equal = a
        .iter()
        .zip(b)
        .filter(|(x, y)| {
            let (x, y) = (x.as_ref(), y.as_ref());
            x == y || x == PLACEHOLDER || y == PLACEHOLDER
        })
        .count();
    Ok(equal as f64 / a.len() as f64)
}

/// Score used when matching a log against a group template: share of
/// positions where the template holds the same static token. Placeholder
/// positions neither help nor hurt, so a template cannot absorb unrelated
/// logs just by having accumulated placeholders.
pub fn match_score(template: &[String], tokens: &[&str]) -> f64 {
    if template.len() != tokens.len() {
        return 0.0;
    }
    if template.is_empty() {
        return 1.0;
    }
    let equal = template
        .iter()
        .zip(tokens)
        .filter(|(t, x)| *t != PLACEHOLDER && t == *x)
        .count();
    equal as f64 / template.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogGroup {
    pub template: Vec<String>,
    pub members: Vec<u64>,
}

impl LogGroup {
    pub fn template_text(&self) -> String {
        self.template.join(" ")
    }

    pub fn placeholder_count(&self) -> usize {
        self.template.iter().filter(|t| *t == PLACEHOLDER).count()
    }
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<String, usize>,
    groups: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ParseTree {
    config: DrainConfig,
    nodes: Vec<Node>,
    by_length: BTreeMap<usize, usize>,
    groups: Vec<LogGroup>,
}

fn has_digit(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit())
}

impl ParseTree {
    pub fn new(config: DrainConfig) -> Result<Self, DrainError> {
        config.validate()?;
        Ok(ParseTree {
            config,
            nodes: Vec::new(),
            by_length: BTreeMap::new(),
            groups: Vec::new(),
        })
    }

    pub fn config(&self) -> &DrainConfig {
        &self.config
    }

    pub fn groups(&self) -> &[LogGroup] {
        &self.groups
    }

    fn prefix_len(&self, n_tokens: usize) -> usize {
        (self.config.depth - 2).min(n_tokens)
    }

    fn new_node(&mut self) -> usize {
        self.nodes.push(Node::default());
        self.nodes.len() - 1
    }

    /// Walks the prefix levels without modifying the tree.
    fn find_leaf(&self, tokens: &[&str]) -> Option<usize> {
        let mut node = *self.by_length.get(&tokens.len())?;
        for token in &tokens[..self.prefix_len(tokens.len())] {
            let children = &self.nodes[node].children;
            node = match children.get(*token) {
                Some(&n) => n,
                None => *children.get(PLACEHOLDER)?,
            };
        }
        Some(node)
    }

    /// Walks the prefix levels, creating nodes as needed.
    fn leaf_for_insert(&mut self, tokens: &[&str]) -> usize {
        let mut node = match self.by_length.get(&tokens.len()) {
            Some(&n) => n,
            None => {
                let n = self.new_node();
                self.by_length.insert(tokens.len(), n);
                n
            }
        };
        let max_children = self.config.max_children;
        for token in &tokens[..self.prefix_len(tokens.len())] {
            if let Some(&next) = self.nodes[node].children.get(*token) {
                node = next;
                continue;
            }
            let has_wild = self.nodes[node].children.contains_key(PLACEHOLDER);
            let n_children = self.nodes[node].children.len();
            let key = if has_digit(token) {
                PLACEHOLDER
            } else if has_wild {
                if n_children < max_children {
                    token
                } else {
                    PLACEHOLDER
                }
            } else if n_children + 1 < max_children {
                token
            } else {
                PLACEHOLDER
            };
            node = match self.nodes[node].children.get(key) {
                Some(&next) => next,
                None => {
                    let next = self.new_node();
                    self.nodes[node].children.insert(key.to_string(), next);
                    next
                }
            };
        }
        node
    }

    /// Most similar group at `leaf`, if it reaches the threshold. Ties go to
    /// the group with more placeholders, then to the older group.
    fn best_match(&self, leaf: usize, tokens: &[&str]) -> Option<usize> {
        let mut best: Option<(f64, usize, usize)> = None;
        for &g in &self.nodes[leaf].groups {
            let group = &self.groups[g];
            let sim = match_score(&group.template, tokens);
            let params = group.placeholder_count();
            let better = match best {
                None => true,
                Some((s, p, _)) => sim > s || (sim == s && params > p),
            };
            if better {
                best = Some((sim, params, g));
            }
        }
        best.filter(|(s, _, _)| *s >= self.config.similarity_threshold)
            .map(|(_, _, g)| g)
    }

    fn new_group(&mut self, leaf: usize, tokens: &[&str], log_id: u64) -> usize {
        self.groups.push(LogGroup {
            template: tokens.iter().map(|t| t.to_string()).collect(),
            members: alloc::vec![log_id],
        });
        let g = self.groups.len() - 1;
        self.nodes[leaf].groups.push(g);
        g
    }

    /// Online insertion: matches or creates a group and updates its template.
    pub fn insert(&mut self, log_id: u64, content: &str) -> usize {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let leaf = self.leaf_for_insert(&tokens);
        match self.best_match(leaf, &tokens) {
            Some(g) => {
                let group = &mut self.groups[g];
                for (slot, token) in group.template.iter_mut().zip(&tokens) {
                    if slot != token && slot != PLACEHOLDER {
                        *slot = PLACEHOLDER.to_string();
                    }
                }
                group.members.push(log_id);
                g
            }
            None => self.new_group(leaf, &tokens, log_id),
        }
    }

    /// Assigns a log without altering existing templates. Logs that match no
    /// group still open a new one so every log gets a template.
    pub fn assign_frozen(&mut self, log_id: u64, content: &str) -> usize {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let found = self
            .find_leaf(&tokens)
            .and_then(|leaf| self.best_match(leaf, &tokens));
        match found {
            Some(g) => {
                self.groups[g].members.push(log_id);
                g
            }
            None => {
                let leaf = self.leaf_for_insert(&tokens);
                self.new_group(leaf, &tokens, log_id)
            }
        }
    }

    /// Final template text of every member log.
    pub fn assignments(&self) -> BTreeMap<u64, String> {
        let mut out = BTreeMap::new();
        for group in &self.groups {
            let text = group.template_text();
            for &id in &group.members {
                out.insert(id, text.clone());
            }
        }
        out
    }
}

/// Parses `logs` in order and returns each log's final template.
pub fn parse_stream(
    logs: &[LogRecord],
    config: &DrainConfig,
) -> Result<BTreeMap<u64, String>, DrainError> {
    let mut tree = ParseTree::new(*config)?;
    for log in logs {
        tree.insert(log.line_id, &log.content);
    }
    Ok(tree.assignments())
}

/// Counts `<*>` tokens, including tokens that only partly hold a placeholder.
pub fn variable_positions(template: &str) -> usize {
    template
        .split_whitespace()
        .filter(|t| is_variable(t))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use proptest::prelude::*;

    fn logs(lines: &[&str]) -> Vec<LogRecord> {
        lines
            .iter()
            .enumerate()
            .map(|(i, c)| LogRecord {
                line_id: i as u64 + 1,
                content: c.to_string(),
                domain: "T".to_string(),
            })
            .collect()
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(
            similarity(&["a", "b", "c"], &["a", "x", "c"]).unwrap(),
            2.0 / 3.0
        );
        assert_eq!(similarity(&["<*>", "b"], &["z", "b"]).unwrap(), 1.0);
        assert_eq!(
            similarity(&["a"], &["a", "b"]).unwrap_err(),
            DrainError::LengthMismatch(1, 2)
        );
    }

    #[test]
    fn identical_logs_share_their_own_text() {
        let out =
            parse_stream(&logs(&["disk full", "disk full"]), &DrainConfig::default()).unwrap();
        assert_eq!(out[&1], "disk full");
        assert_eq!(out[&2], "disk full");
    }

    #[test]
    fn differing_position_becomes_placeholder() {
        let out = parse_stream(
            &logs(&["open conn 8", "open conn 9"]),
            &DrainConfig::default(),
        )
        .unwrap();
        assert_eq!(out[&1], "open conn <*>");
        assert_eq!(out[&2], "open conn <*>");
    }

    #[test]
    fn lengths_never_mix() {
        let out = parse_stream(&logs(&["a b", "a b c"]), &DrainConfig::default()).unwrap();
        assert_eq!(out[&1], "a b");
        assert_eq!(out[&2], "a b c");
    }

    #[test]
    fn below_threshold_opens_new_group() {
        let out = parse_stream(
            &logs(&["alpha beta gamma delta", "alpha x y z"]),
            &DrainConfig::default(),
        )
        .unwrap();
        assert_eq!(out[&1], "alpha beta gamma delta");
        assert_eq!(out[&2], "alpha x y z");
    }

    #[test]
    fn digit_tokens_share_wildcard_branch() {
        let out = parse_stream(
            &logs(&[
                "node 12 is online",
                "node 13 is online",
                "node 7 going offline",
            ]),
            &DrainConfig::default(),
        )
        .unwrap();
        assert_eq!(out[&1], "node <*> is online");
        assert_eq!(out[&3], "node 7 going offline");
    }

    #[test]
    fn max_children_overflow_routes_to_wildcard() {
        let cfg = DrainConfig {
            max_children: 2,
            ..DrainConfig::default()
        };
        let mut tree = ParseTree::new(cfg).unwrap();
        for (i, w) in ["aa", "bb", "cc", "dd"].iter().enumerate() {
            tree.insert(i as u64, &format!("{w} event happened"));
        }
        // "aa" gets its own child; the rest collapse into the <*> branch.
        assert!(tree.groups().len() <= 2);
    }

    #[test]
    fn frozen_assignment_keeps_templates() {
        let mut tree = ParseTree::new(DrainConfig::default()).unwrap();
        tree.insert(1, "open conn 8");
        tree.insert(2, "open conn 9");
        tree.assign_frozen(3, "open conn 10");
        tree.assign_frozen(4, "close file now");
        let a = tree.assignments();
        assert_eq!(a[&3], "open conn <*>");
        assert_eq!(a[&4], "close file now");
        assert_eq!(tree.groups().len(), 2);
    }

    #[test]
    fn invalid_configs() {
        assert!(ParseTree::new(DrainConfig {
            depth: 2,
            ..Default::default()
        })
        .is_err());
        assert!(ParseTree::new(DrainConfig {
            similarity_threshold: 1.0,
            ..Default::default()
        })
        .is_err());
        assert!(ParseTree::new(DrainConfig {
            max_children: 0,
            ..Default::default()
        })
        .is_err());
    }

    fn corpus() -> impl Strategy<Value = Vec<String>> {
        let word = prop_oneof![
            Just("open"),
            Just("close"),
            Just("conn"),
            Just("file"),
            Just("user"),
            Just("7"),
            Just("42"),
            Just("blk_1"),
            Just("ok"),
            Just("failed"),
        ];
        proptest::collection::vec(proptest::collection::vec(word, 1..6), 1..40)
            .prop_map(|lines| lines.into_iter().map(|l| l.join(" ")).collect())
    }

    proptest! {
        #[test]
        fn assignment_is_total(lines in corpus()) {
            let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
            let out = parse_stream(&logs(&refs), &DrainConfig::default()).unwrap();
            prop_assert_eq!(out.len(), lines.len());
            for (id, t) in &out {
                let log = &lines[*id as usize - 1];
                prop_assert_eq!(t.split_whitespace().count(), log.split_whitespace().count());
            }
        }

        #[test]
        fn placeholders_never_decrease(lines in corpus()) {
            let mut tree = ParseTree::new(DrainConfig::default()).unwrap();
            let mut seen: Vec<usize> = Vec::new();
            for (i, l) in lines.iter().enumerate() {
                tree.insert(i as u64, l);
                for (g, group) in tree.groups().iter().enumerate() {
                    let now = group.placeholder_count();
                    if let Some(prev) = seen.get(g) {
                        prop_assert!(now >= *prev);
                    }
                    if g < seen.len() { seen[g] = now; } else { seen.push(now); }
                }
            }
        }

        #[test]
        fn reparsing_templates_keeps_grouping(lines in corpus()) {
            let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
            let first = parse_stream(&logs(&refs), &DrainConfig::default()).unwrap();
            let templates: Vec<&str> = first.values().map(String::as_str).collect();
            let second = parse_stream(&logs(&templates), &DrainConfig::default()).unwrap();
            let a: Vec<&String> = first.values().collect();
            let b: Vec<&String> = second.values().collect();
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    prop_assert_eq!(a[i] == a[j], b[i] == b[j]);
                }
            }
        }
    }

    #[test]
    fn variable_position_count() {
        assert_eq!(variable_positions("blk_<*> from <*> ok"), 2);
    }
}

//! Placeholder canonicalization and the whitespace tokenizer used for templates.

use alloc::string::String;
use alloc::vec::Vec;

use regex::Regex;

/// The single placeholder spelling every template is normalized to.
pub const PLACEHOLDER: &str = "<*>";

/// Placeholder spellings recognized by [`Canonicalizer::default`].
pub const DEFAULT_PLACEHOLDER_PATTERNS: [&str; 3] = [r"<\*>", r"<[A-Z]+>", r"\{[a-zA-Z_]+\}"];

/// Rewrites every configured placeholder spelling to `<*>`.
#[derive(Debug, Clone)]
pub struct Canonicalizer {
    patterns: Vec<Regex>,
}

impl Canonicalizer {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, regex::Error> {
        let patterns = patterns
            .iter()
            .map(|p| Regex::new(p.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Canonicalizer { patterns })
    }

    pub fn canonicalize(&self, template: &str) -> String {
        let mut out = String::from(template);
        for re in &self.patterns {
            if re.is_match(&out) {
                out = re.replace_all(&out, PLACEHOLDER).into_owned();
            }
        }
        out
    }
}

impl Default for Canonicalizer {
    fn default() -> Self {
        Canonicalizer::new(&DEFAULT_PLACEHOLDER_PATTERNS).expect("default patterns compile")
    }
}

/// Splits on runs of whitespace.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// A template token is a variable when it holds a placeholder.
pub fn is_variable(token: &str) -> bool {
    token.contains(PLACEHOLDER)
}

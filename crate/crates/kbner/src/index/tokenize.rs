//! The analyzer shared by indexing and query parsing.

use serde::{Deserialize, Serialize};

/// A normalized index term: lowercased, no whitespace or punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Term(pub String);

impl Term {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Term {
    fn from(s: &str) -> Self {
        Term(s.to_string())
    }
}

/// Han ideographs and kana have no internal word boundaries the analyzer
/// could split on, so each character becomes its own term.
fn is_cjk_single(c: char) -> bool {
    matches!(c,
        '\u{4E00}'..='\u{9FFF}'   // CJK Unified Ideographs
        | '\u{3400}'..='\u{4DBF}' // CJK Extension A
        | '\u{F900}'..='\u{FAFF}' // CJK Compatibility Ideographs
        | '\u{3040}'..='\u{309F}' // Hiragana
        | '\u{30A0}'..='\u{30FF}' // Katakana
    )
}

/// Lowercases and splits text into terms: runs of alphanumeric characters,
/// except that CJK characters are emitted as single-character terms.
/// Whitespace and punctuation never appear in a term.
pub fn tokenize_for_index(text: &str) -> Vec<Term> {
    let mut terms = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, terms: &mut Vec<Term>| {
        if !current.is_empty() {
            terms.push(Term(current.to_lowercase()));
            current.clear();
        }
    };
    for c in text.chars() {
        if is_cjk_single(c) {
            flush(&mut current, &mut terms);
            terms.push(Term(c.to_string()));
        } else if c.is_alphanumeric() {
            current.push(c);
        } else {
            flush(&mut current, &mut terms);
        }
    }
    flush(&mut current, &mut terms);
    terms
}

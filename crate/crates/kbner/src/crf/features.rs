//! Sparse feature extraction and the feature name interner.
//!
//! Each token yields a bag of binary features: the token itself, its
//! lowercase form, its character shape, prefixes and suffixes up to three
//! codepoints, the lowercase neighbors (with `<BOS>`/`<EOS>` sentinels), and
//! one `flag:` feature per set context flag. There is no bias feature, so a
//! token with no active features scores zero under every label.

use std::collections::HashMap;

use crate::retrieval::ContextFlags;

use super::CrfError;

/// Interns feature names to dense indices. Indices are assigned in first-seen
/// order, so a map built from the same data in the same order is identical.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureMap {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl FeatureMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a map in the given index order, e.g. from a model file.
    pub fn from_names(names: Vec<String>) -> Result<Self, CrfError> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i as u32).is_some() {
                return Err(CrfError::Corrupt(format!("duplicate feature `{name}`")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    /// Index for `name`, assigning the next free one on first sight.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }
}

/// Character shape of a token: uppercase to `X`, lowercase to `x`, numeric to
/// `9`, anything else kept as is. One symbol per codepoint, no collapsing.
pub fn shape_of(token: &str) -> String {
    token
        .chars()
        .map(|c| {
            if c.is_uppercase() {
                'X'
            } else if c.is_lowercase() {
                'x'
            } else if c.is_numeric() {
                '9'
            } else {
                c
            }
        })
        .collect()
}

/// Feature names for token `i` of the sentence.
pub fn token_features(tokens: &[String], i: usize, flags: &ContextFlags) -> Vec<String> {
    let token = &tokens[i];
    let lower = token.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();

    let mut out = Vec::with_capacity(12);
    out.push(format!("w={token}"));
    out.push(format!("lw={lower}"));
    out.push(format!("shape={}", shape_of(token)));
    for len in 1..=3usize {
        if chars.len() >= len {
            let prefix: String = chars[..len].iter().collect();
            out.push(format!("p{len}={prefix}"));
        }
    }
    for len in 1..=3usize {
        if chars.len() >= len {
            let suffix: String = chars[chars.len() - len..].iter().collect();
            out.push(format!("s{len}={suffix}"));
        }
    }
    let prev = if i == 0 {
        "<BOS>".to_string()
    } else {
        tokens[i - 1].to_lowercase()
    };
    let next = if i + 1 == tokens.len() {
        "<EOS>".to_string()
    } else {
        tokens[i + 1].to_lowercase()
    };
    out.push(format!("prev_lw={prev}"));
    out.push(format!("next_lw={next}"));
    for name in flags.names() {
        out.push(format!("flag:{name}"));
    }
    out
}

fn to_sorted_indices(mut ids: Vec<u32>) -> Vec<u32> {
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Feature indices for a whole sentence, interning new names into `map`.
pub fn index_sentence(
    map: &mut FeatureMap,
    tokens: &[String],
    flags: &[ContextFlags],
) -> Vec<Vec<u32>> {
    debug_assert_eq!(tokens.len(), flags.len());
    (0..tokens.len())
        .map(|i| {
            let ids = token_features(tokens, i, &flags[i])
                .iter()
                .map(|name| map.intern(name))
                .collect();
            to_sorted_indices(ids)
        })
        .collect()
}

/// Feature indices for a sentence against a frozen map; names the map has
/// never seen are dropped.
pub fn lookup_sentence(
    map: &FeatureMap,
    tokens: &[String],
    flags: &[ContextFlags],
) -> Vec<Vec<u32>> {
    debug_assert_eq!(tokens.len(), flags.len());
    (0..tokens.len())
        .map(|i| {
            let ids = token_features(tokens, i, &flags[i])
                .iter()
                .filter_map(|name| map.get(name))
                .collect();
            to_sorted_indices(ids)
        })
        .collect()
}

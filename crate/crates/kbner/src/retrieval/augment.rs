//! Context assembly under a token budget, and per-token context flags.
//!
//! Budget accounting works on whitespace tokens of the markup-stripped
//! context (title first, then text), plus one separator token per context.
//! The first context that would overflow is truncated at a token boundary;
//! an anchor the cut passes through is dropped from the anchor list; every
//! later context is dropped. Flag matching runs on analyzer terms, so it is
//! case-insensitive and follows the index tokenizer.

use serde::{Deserialize, Serialize};

use super::{RetrievalConfig, RetrievalError, RetrievedContext};
use crate::corpus::render_anchor_markup;
use crate::index::tokenize_for_index;

/// Binary context features for one input token.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextFlags {
    /// Some anchor surface equals a token n-gram covering this token.
    pub anchor_exact: bool,
    /// This token's text appears inside some anchor surface.
    pub anchor_partial: bool,
    /// This token's text appears in some context title.
    pub title_match: bool,
    /// This token's text appears in some context text.
    pub context_token: bool,
}

impl ContextFlags {
    pub fn is_empty(&self) -> bool {
        !(self.anchor_exact || self.anchor_partial || self.title_match || self.context_token)
    }

    /// Names of the set flags, in a fixed order.
    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.anchor_exact {
            out.push("AnchorExact");
        }
        if self.anchor_partial {
            out.push("AnchorPartial");
        }
        if self.title_match {
            out.push("TitleMatch");
        }
        if self.context_token {
            out.push("ContextToken");
        }
        out
    }
}

/// An input sentence with its retrieved contexts, trimmed to the token
/// budget, and the per-token context flags computed from those contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedInput {
    pub tokens: Vec<String>,
    pub gold_tags: Option<Vec<String>>,
    pub contexts: Vec<RetrievedContext>,
    pub token_budget: usize,
    pub flags: Vec<ContextFlags>,
}

/// Whitespace tokens of `s` with their codepoint spans.
fn ws_tokens(s: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut pos = 0;
    for c in s.chars() {
        if c.is_whitespace() {
            if let Some(st) = start.take() {
                spans.push((st, pos));
            }
        } else if start.is_none() {
            start = Some(pos);
        }
        pos += 1;
    }
    if let Some(st) = start {
        spans.push((st, pos));
    }
    spans
}

fn context_token_count(ctx: &RetrievedContext) -> Result<usize, RetrievalError> {
    let plain = ctx.plain_text()?;
    Ok(ws_tokens(&ctx.title).len() + ws_tokens(&plain).len())
}

/// Cuts a context down to `keep` whitespace tokens (title tokens first).
/// Returns `None` when nothing of the text would survive.
fn truncate_context(
    ctx: &RetrievedContext,
    keep: usize,
) -> Result<Option<RetrievedContext>, RetrievalError> {
    let title_count = ws_tokens(&ctx.title).len();
    if keep <= title_count {
        return Ok(None);
    }
    let plain = ctx.plain_text()?;
    let text_spans = ws_tokens(&plain);
    let keep_text = keep - title_count;
    if keep_text >= text_spans.len() {
        return Ok(Some(ctx.clone()));
    }
    let cut = text_spans[keep_text - 1].1;
    let truncated_plain: String = plain.chars().take(cut).collect();
    let kept_anchors: Vec<_> = ctx
        .anchors
        .iter()
        .filter(|a| a.end <= cut)
        .cloned()
        .collect();
    let text = if ctx.anchors.is_empty() {
        truncated_plain
    } else {
        render_anchor_markup(&truncated_plain, &kept_anchors)?
    };
    Ok(Some(RetrievedContext {
        title: ctx.title.clone(),
        text,
        anchors: kept_anchors,
        source_doc_id: ctx.source_doc_id.clone(),
        rank: ctx.rank,
    }))
}

/// Assembles an [`AugmentedInput`]: contexts are taken in rank order, each
/// costing one separator token plus its own tokens, until the budget is
/// reached; the overflowing context is truncated and the rest are dropped.
pub fn augment(
    tokens: &[String],
    gold_tags: Option<Vec<String>>,
    contexts: Vec<RetrievedContext>,
    config: &RetrievalConfig,
) -> Result<AugmentedInput, RetrievalError> {
    let n = tokens.len();
    if n > config.token_budget {
        return Err(RetrievalError::BudgetTooSmall {
            sentence_tokens: n,
            token_budget: config.token_budget,
        });
    }
    let mut ordered = contexts;
    ordered.sort_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then_with(|| a.source_doc_id.cmp(&b.source_doc_id))
    });

    let mut kept = Vec::new();
    let mut used = n;
    for ctx in &ordered {
        let cost = context_token_count(ctx)?;
        if used + 1 + cost <= config.token_budget {
            used += 1 + cost;
            kept.push(ctx.clone());
            continue;
        }
        if config.token_budget > used + 1 {
            let available = config.token_budget - used - 1;
            if let Some(truncated) = truncate_context(ctx, available)? {
                kept.push(truncated);
            }
        }
        break;
    }

    let flags = context_features(tokens, &kept);
    Ok(AugmentedInput {
        tokens: tokens.to_vec(),
        gold_tags,
        contexts: kept,
        token_budget: config.token_budget,
        flags,
    })
}

fn term_strings(text: &str) -> Vec<String> {
    tokenize_for_index(text).into_iter().map(|t| t.0).collect()
}

fn all_in(needles: &[String], haystack: &std::collections::HashSet<&str>) -> bool {
    !needles.is_empty() && needles.iter().all(|t| haystack.contains(t.as_str()))
}

/// Computes the four context flags for every input token.
///
/// Matching runs on analyzer terms. A token "appears in" a title or text
/// when all of its terms do; `anchor_exact` requires a contiguous token
/// window (each token contributing at least one term) whose concatenated
/// terms equal the anchor surface's terms.
pub fn context_features(tokens: &[String], contexts: &[RetrievedContext]) -> Vec<ContextFlags> {
    use std::collections::HashSet;

    let token_terms: Vec<Vec<String>> = tokens.iter().map(|t| term_strings(t)).collect();
    let mut flags = vec![ContextFlags::default(); tokens.len()];

    for ctx in contexts {
        let plain = match ctx.plain_text() {
            Ok(p) => p,
            // Context text is produced by this crate's renderers; a context
            // that cannot be parsed contributes no flags.
            Err(_) => continue,
        };
        let text_owned = term_strings(&plain);
        let text_terms: HashSet<&str> = text_owned.iter().map(|s| s.as_str()).collect();
        let title_owned = term_strings(&ctx.title);
        let title_terms: HashSet<&str> = title_owned.iter().map(|s| s.as_str()).collect();

        for (i, terms) in token_terms.iter().enumerate() {
            if all_in(terms, &text_terms) {
                flags[i].context_token = true;
            }
            if all_in(terms, &title_terms) {
                flags[i].title_match = true;
            }
        }

        for anchor in &ctx.anchors {
            let surface_terms = term_strings(&anchor.surface);
            if surface_terms.is_empty() {
                continue;
            }
            let surface_set: HashSet<&str> = surface_terms.iter().map(|s| s.as_str()).collect();
            for (i, terms) in token_terms.iter().enumerate() {
                if all_in(terms, &surface_set) {
                    flags[i].anchor_partial = true;
                }
            }
            mark_exact_windows(&token_terms, &surface_terms, &mut flags);
        }
    }
    flags
}

/// Sets `anchor_exact` on every token of each window whose concatenated
/// terms equal `surface_terms`.
fn mark_exact_windows(
    token_terms: &[Vec<String>],
    surface_terms: &[String],
    flags: &mut [ContextFlags],
) {
    let n = token_terms.len();
    for start in 0..n {
        if token_terms[start].is_empty() {
            continue;
        }
        let mut matched = 0usize;
        let mut end = start;
        while end < n && matched < surface_terms.len() {
            let terms = &token_terms[end];
            if terms.is_empty()
                || matched + terms.len() > surface_terms.len()
                || terms
                    .iter()
                    .zip(&surface_terms[matched..])
                    .any(|(a, b)| a != b)
            {
                break;
            }
            matched += terms.len();
            end += 1;
        }
        if matched == surface_terms.len() && end > start {
            for flag in flags.iter_mut().take(end).skip(start) {
                flag.anchor_exact = true;
            }
        }
    }
}

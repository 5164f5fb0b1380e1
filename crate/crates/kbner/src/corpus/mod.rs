//! Knowledge-base corpus ingestion and labeled NER data.
//!
//! A knowledge base arrives as JSON lines, one paragraph per line, with
//! entity mentions marked up as `<e:TITLE>SURFACE</e>`. Ingestion splits each
//! paragraph into sentences and emits one [`KbDocument`] per sentence so that
//! retrieval can match at sentence granularity while still carrying the full
//! paragraph for context rendering.
//!
//! Labeled NER data uses CoNLL-style files (token + BIO tag columns) and the
//! usual span form: `(start, end, label)` over token offsets.

mod bio;
mod conll;
mod markup;

pub use bio::{bio_from_spans, spans_from_bio};
pub use conll::parse_conll;
pub use markup::{parse_anchor_markup, render_anchor_markup};

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while parsing corpora, markup, CoNLL data, or span lists.
#[derive(Debug, Error)]
pub enum CorpusError {
    /// Anchor markup that cannot be parsed back to plain text + anchors.
    #[error("malformed markup{}: {reason}", fmt_line(.line))]
    MalformedMarkup { reason: String, line: Option<usize> },
    /// An anchor that disagrees with the plain text it claims to cover.
    #[error("inconsistent anchor: {0}")]
    InconsistentAnchor(String),
    /// Two corpus lines carry the same id.
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    /// A corpus line that is not valid JSON or lacks a required field.
    #[error("corpus line {line}: {reason}")]
    BadCorpusLine { line: usize, reason: String },
    /// A tag that is not `O`, `B-<label>`, or `I-<label>`.
    #[error("bad tag{}: {tag:?}", fmt_line(.line))]
    BadTag { tag: String, line: Option<usize> },
    /// A sentence block with no token lines.
    #[error("empty sentence at line {0}")]
    EmptySentence(usize),
    /// Spans that overlap where a disjoint set is required.
    #[error("overlapping spans: {0}")]
    OverlapError(String),
    /// A span whose offsets do not fit the sentence.
    #[error("span out of range: {0}")]
    SpanOutOfRange(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_line(line: &Option<usize>) -> String {
    match line {
        Some(n) => format!(" at line {n}"),
        None => String::new(),
    }
}

/// An entity mention inside a knowledge-base paragraph, linked to a page
/// title. Offsets are codepoint positions into the markup-stripped text and
/// `surface` equals that text slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub surface: String,
    pub target_title: String,
    pub start: usize,
    pub end: usize,
}

/// One sentence of a knowledge-base paragraph, addressable for retrieval.
///
/// `doc_id` is `<line id>#<sentence ordinal>`. `sentence` is the plain
/// (markup-stripped) sentence text and `sentence_start` its codepoint offset
/// into the plain paragraph; `anchors` are relative to the plain paragraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbDocument {
    pub doc_id: String,
    pub title: String,
    pub sentence: String,
    pub sentence_start: usize,
    pub paragraph_marked: String,
    pub anchors: Vec<Anchor>,
    pub language: String,
}

/// A tokenized sentence with one BIO tag per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl LabeledSentence {
    /// Builds a sentence after checking that tokens and tags line up, the
    /// sentence is nonempty, and every tag is BIO-shaped.
    pub fn new(tokens: Vec<String>, tags: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence(0));
        }
        if tokens.len() != tags.len() {
            return Err(CorpusError::BadTag {
                tag: format!("{} tokens vs {} tags", tokens.len(), tags.len()),
                line: None,
            });
        }
        for tag in &tags {
            check_bio_tag(tag, None)?;
        }
        Ok(Self { tokens, tags })
    }
}

/// A labeled token span: `[start, end)` over token offsets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    /// True when the token ranges intersect, labels ignored.
    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

pub(crate) fn check_bio_tag(tag: &str, line: Option<usize>) -> Result<(), CorpusError> {
    let ok = tag == "O" || (tag.len() > 2 && (tag.starts_with("B-") || tag.starts_with("I-")));
    if ok {
        Ok(())
    } else {
        Err(CorpusError::BadTag {
            tag: tag.to_string(),
            line,
        })
    }
}

/// Sentence terminators recognized by the splitter. A terminator ends a
/// sentence only when followed by whitespace or end of text, and never inside
/// an anchor span.
const SENTENCE_TERMINATORS: [char; 6] = ['.', '!', '?', '\u{3002}', '\u{61F}', '\u{964}'];

/// Splits plain paragraph text into sentences, returning codepoint ranges.
///
/// Anchor spans are never split. Leading whitespace is trimmed off each
/// sentence and whitespace-only sentences are dropped.
pub(crate) fn split_sentences(plain: &str, anchors: &[Anchor]) -> Vec<(usize, usize)> {
    let chars: Vec<char> = plain.chars().collect();
    let n = chars.len();
    // A terminator that is part of a mention ("U.S.", "Apple Inc.") does not
    // end a sentence.
    let inside_anchor = |pos: usize| anchors.iter().any(|a| pos >= a.start && pos < a.end);

    let mut ranges = Vec::new();
    let mut start = 0usize;
    for i in 0..n {
        let is_term = SENTENCE_TERMINATORS.contains(&chars[i]);
        let at_boundary = i + 1 == n || chars[i + 1].is_whitespace();
        if is_term && at_boundary && !inside_anchor(i) {
            ranges.push((start, i + 1));
            start = i + 1;
        }
    }
    if start < n {
        ranges.push((start, n));
    }

    ranges
        .into_iter()
        .filter_map(|(mut s, e)| {
            while s < e && chars[s].is_whitespace() {
                s += 1;
            }
            (s < e).then_some((s, e))
        })
        .collect()
}

/// Reads a knowledge-base corpus: JSON lines with `id`, `title`, `paragraph`
/// (anchor markup allowed), and `language` fields. Unknown fields are
/// ignored. Each paragraph is split into sentences and one [`KbDocument`] is
/// emitted per sentence, with `doc_id = "<id>#<ordinal>"`.
pub fn ingest_corpus<R: BufRead>(reader: R) -> Result<Vec<KbDocument>, CorpusError> {
    #[derive(Deserialize)]
    struct CorpusLine {
        id: String,
        title: String,
        paragraph: String,
        language: String,
    }

    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine =
            serde_json::from_str(&line).map_err(|e| CorpusError::BadCorpusLine {
                line: line_no,
                reason: e.to_string(),
            })?;
        if !seen.insert(parsed.id.clone()) {
            return Err(CorpusError::DuplicateId(parsed.id));
        }
        let (plain, anchors) = parse_anchor_markup(&parsed.paragraph).map_err(|e| match e {
            CorpusError::MalformedMarkup { reason, .. } => CorpusError::MalformedMarkup {
                reason,
                line: Some(line_no),
            },
            other => other,
        })?;
        let plain_chars: Vec<char> = plain.chars().collect();
        for (ordinal, (s, e)) in split_sentences(&plain, &anchors).into_iter().enumerate() {
            let sentence: String = plain_chars[s..e].iter().collect();
            docs.push(KbDocument {
                doc_id: format!("{}#{}", parsed.id, ordinal),
                title: parsed.title.clone(),
                sentence,
                sentence_start: s,
                paragraph_marked: parsed.paragraph.clone(),
                anchors: anchors.clone(),
                language: parsed.language.clone(),
            });
        }
    }
    Ok(docs)
}

//! Knowledge-base retrieval for input sentences.
//!
//! Turn 0 queries the sentence field with the whole input sentence. Later
//! turns ("entity retrieval") take the mentions predicted so far, join them
//! with `|`, and query the title field, replacing the current contexts with
//! the new results; a turn that predicts no mentions keeps the previous
//! contexts and stops. Retrieved documents are rendered into contexts in one
//! of three forms and concatenated in rank order under a token budget.

mod augment;

pub use augment::{augment, context_features, AugmentedInput, ContextFlags};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    parse_anchor_markup, render_anchor_markup, Anchor, CorpusError, EntitySpan, KbDocument,
};
use crate::index::{Field, IndexError, ScoredDoc, SearchIndex};

/// Errors from retrieval and context assembly.
#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("entity retrieval needs at least one mention")]
    NoMentions,
    #[error("token budget {token_budget} cannot hold the {sentence_tokens}-token sentence")]
    BudgetTooSmall {
        sentence_tokens: usize,
        token_budget: usize,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// How a retrieved document is rendered into a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextOption {
    /// The full paragraph with anchor markup.
    Para,
    /// The matched sentence with anchor markup.
    Sent,
    /// The matched sentence with anchors stripped.
    SentNolink,
}

/// Retrieval settings: `k` results per query, `turns` entity-retrieval
/// rounds after the sentence round, the context rendering option, and the
/// total token budget for sentence plus contexts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub turns: usize,
    pub option: ContextOption,
    pub token_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            turns: 2,
            option: ContextOption::Para,
            token_budget: 512,
        }
    }
}

/// One rendered retrieval result. `text` carries anchor markup for
/// [`ContextOption::Para`] and [`ContextOption::Sent`]; `anchors` hold the
/// same spans with offsets into the markup-stripped text (always empty for
/// [`ContextOption::SentNolink`]). `rank` is the 1-based retrieval rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub title: String,
    pub text: String,
    pub anchors: Vec<Anchor>,
    pub source_doc_id: String,
    pub rank: usize,
}

impl RetrievedContext {
    /// The markup-stripped text.
    pub fn plain_text(&self) -> Result<String, CorpusError> {
        Ok(parse_anchor_markup(&self.text)?.0)
    }
}

/// Retrieves for the whole sentence (tokens joined by spaces) on the
/// sentence field. A sentence that analyzes to no terms retrieves nothing.
pub fn sentence_retrieve(
    index: &SearchIndex,
    tokens: &[String],
    k: usize,
) -> Result<Vec<ScoredDoc>, RetrievalError> {
    let query = tokens.join(" ");
    match index.search(Field::Sentence, &query, k) {
        Ok(hits) => Ok(hits),
        Err(IndexError::EmptyQueryAfterAnalysis) => Ok(vec![]),
        Err(e) => Err(e.into()),
    }
}

/// Retrieves for predicted mentions (joined by `|`) on the title field.
/// Mentions that analyze to no terms retrieve nothing.
pub fn entity_retrieve(
    index: &SearchIndex,
    mentions: &[String],
    k: usize,
) -> Result<Vec<ScoredDoc>, RetrievalError> {
    if mentions.is_empty() {
        return Err(RetrievalError::NoMentions);
    }
    let query = mentions.join("|");
    match index.search(Field::Title, &query, k) {
        Ok(hits) => Ok(hits),
        Err(IndexError::EmptyQueryAfterAnalysis) => Ok(vec![]),
        Err(e) => Err(e.into()),
    }
}

/// Renders one retrieved document per the context option.
pub fn process_context(
    doc: &KbDocument,
    option: ContextOption,
    rank: usize,
) -> Result<RetrievedContext, RetrievalError> {
    let (text, anchors) = match option {
        ContextOption::Para => (doc.paragraph_marked.clone(), doc.anchors.clone()),
        ContextOption::Sent => {
            let sent_len = doc.sentence.chars().count();
            let lo = doc.sentence_start;
            let hi = lo + sent_len;
            let rebased: Vec<Anchor> = doc
                .anchors
                .iter()
                .filter(|a| a.start >= lo && a.end <= hi)
                .map(|a| Anchor {
                    surface: a.surface.clone(),
                    target_title: a.target_title.clone(),
                    start: a.start - lo,
                    end: a.end - lo,
                })
                .collect();
            (render_anchor_markup(&doc.sentence, &rebased)?, rebased)
        }
        ContextOption::SentNolink => (doc.sentence.clone(), vec![]),
    };
    Ok(RetrievedContext {
        title: doc.title.clone(),
        text,
        anchors,
        source_doc_id: doc.doc_id.clone(),
        rank,
    })
}

/// Renders search hits into contexts, deduplicated by source document
/// keeping the best (lowest) rank, ordered by rank.
pub fn contexts_from_hits(
    index: &SearchIndex,
    hits: &[ScoredDoc],
    option: ContextOption,
) -> Result<Vec<RetrievedContext>, RetrievalError> {
    let mut contexts = Vec::with_capacity(hits.len());
    for hit in hits {
        let doc = index
            .doc(hit.ordinal)
            .ok_or(IndexError::UnknownDocument(hit.ordinal))?;
        contexts.push(process_context(doc, option, hit.rank)?);
    }
    Ok(dedup_by_doc_id(contexts))
}

fn dedup_by_doc_id(mut contexts: Vec<RetrievedContext>) -> Vec<RetrievedContext> {
    contexts.sort_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then_with(|| a.source_doc_id.cmp(&b.source_doc_id))
    });
    let mut seen = std::collections::HashSet::new();
    contexts.retain(|c| seen.insert(c.source_doc_id.clone()));
    contexts
}

/// Sentence retrieval followed by up to `config.turns` rounds of
/// entity retrieval, predicting mentions with `predictor` on the current
/// augmented input. Mention surfaces are the predicted spans' tokens joined
/// by spaces, entity types ignored.
pub fn iterative_retrieve<P>(
    index: &SearchIndex,
    tokens: &[String],
    mut predictor: P,
    config: &RetrievalConfig,
) -> Result<Vec<RetrievedContext>, RetrievalError>
where
    P: FnMut(&AugmentedInput) -> Vec<EntitySpan>,
{
    let hits = sentence_retrieve(index, tokens, config.k)?;
    let mut contexts = contexts_from_hits(index, &hits, config.option)?;

    for _ in 0..config.turns {
        let augmented = augment(tokens, None, contexts.clone(), config)?;
        let spans = predictor(&augmented);
        let mentions: Vec<String> = spans
            .iter()
            .filter(|s| s.start < s.end && s.end <= tokens.len())
            .map(|s| tokens[s.start..s.end].join(" "))
            .collect();
        if mentions.is_empty() {
            break;
        }
        let hits = entity_retrieve(index, &mentions, config.k)?;
        contexts = contexts_from_hits(index, &hits, config.option)?;
    }
    Ok(contexts)
}

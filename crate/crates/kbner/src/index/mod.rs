//! BM25 inverted index over knowledge-base documents.
//!
//! Two fields are indexed per document: the sentence text and the page
//! title. Scoring uses BM25 with `k1 = 1.2`, `b = 0.75`, and the smoothed
//! idf `ln(1 + (N - df + 0.5) / (df + 0.5))`, so idf is strictly positive
//! and absent terms contribute nothing. Ranking is deterministic: score
//! descending, ties broken by ascending `doc_id`.

mod store;
mod tokenize;

pub(crate) use store::sha256_hex;
pub use store::{index_manifest_path, INDEX_FORMAT_VERSION};
pub use tokenize::{tokenize_for_index, Term};

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::corpus::KbDocument;
use crate::exec;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Errors from index construction, scoring, and persistence.
#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("unknown document ordinal {0}")]
    UnknownDocument(u32),
    #[error("query has no terms after analysis")]
    EmptyQueryAfterAnalysis,
    #[error("index format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which indexed field a query runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Sentence,
    Title,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// An inverted index over one field: postings sorted by document ordinal,
/// per-document token counts, and the average length used by BM25.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

impl FieldIndex {
    /// Indexes one text per document ordinal.
    pub fn build(texts: &[&str]) -> Self {
        let tokenized = exec::map_vec(texts, |text| tokenize_for_index(text));
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(texts.len());
        for (ordinal, terms) in tokenized.iter().enumerate() {
            doc_lengths.push(terms.len() as u32);
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            for term in terms {
                *counts.entry(term.as_str()).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: ordinal as u32,
                    tf,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        Self {
            postings,
            doc_lengths,
            avg_doc_length,
        }
    }

    pub(crate) fn from_parts(
        postings: BTreeMap<String, Vec<Posting>>,
        doc_lengths: Vec<u32>,
        avg_doc_length: f64,
    ) -> Self {
        Self {
            postings,
            doc_lengths,
            avg_doc_length,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, ordinal: u32) -> Option<u32> {
        self.doc_lengths.get(ordinal as usize).copied()
    }

    pub fn document_frequency(&self, term: &Term) -> usize {
        self.postings.get(term.as_str()).map_or(0, Vec::len)
    }

    pub fn term_frequency(&self, term: &Term, ordinal: u32) -> u32 {
        self.postings
            .get(term.as_str())
            .and_then(|ps| {
                ps.binary_search_by_key(&ordinal, |p| p.doc)
                    .ok()
                    .map(|i| ps[i].tf)
            })
            .unwrap_or(0)
    }

    pub(crate) fn postings(&self) -> &BTreeMap<String, Vec<Posting>> {
        &self.postings
    }

    pub(crate) fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    /// Ordinals of documents containing at least one query term, ascending.
    fn candidates(&self, terms: &[Term]) -> Vec<u32> {
        let mut cands: Vec<u32> = terms
            .iter()
            .filter_map(|t| self.postings.get(t.as_str()))
            .flat_map(|ps| ps.iter().map(|p| p.doc))
            .collect();
        cands.sort_unstable();
        cands.dedup();
        cands
    }
}

/// BM25 score of one document for the given query terms. Duplicate query
/// terms count once (queries are term disjunctions).
pub fn bm25_score(
    query_terms: &[Term],
    ordinal: u32,
    index: &FieldIndex,
) -> Result<f64, IndexError> {
    let len = index
        .doc_length(ordinal)
        .ok_or(IndexError::UnknownDocument(ordinal))? as f64;
    let n = index.doc_count() as f64;
    let avg = index.avg_doc_length();

    let mut seen: Vec<&str> = Vec::with_capacity(query_terms.len());
    let mut score = 0.0;
    for term in query_terms {
        if seen.contains(&term.as_str()) {
            continue;
        }
        seen.push(term.as_str());
        let df = index.document_frequency(term) as f64;
        if df == 0.0 {
            continue;
        }
        let tf = index.term_frequency(term, ordinal) as f64;
        if tf == 0.0 {
            continue;
        }
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let norm = 1.0 - BM25_B + BM25_B * len / avg;
        score += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
    }
    Ok(score)
}

/// One search hit. `rank` starts at 1; `ordinal` is the document's position
/// in the index's document store.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub ordinal: u32,
    pub score: f64,
    pub rank: usize,
}

/// The searchable knowledge base: sentence and title field indexes plus the
/// document store, ordered by ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchIndex {
    sentence: FieldIndex,
    title: FieldIndex,
    docs: Vec<KbDocument>,
    ids: HashMap<String, u32>,
}

impl SearchIndex {
    /// Indexes the documents, rejecting duplicate `doc_id`s.
    pub fn build(docs: Vec<KbDocument>) -> Result<Self, IndexError> {
        let mut ids = HashMap::with_capacity(docs.len());
        for (ordinal, doc) in docs.iter().enumerate() {
            if ids.insert(doc.doc_id.clone(), ordinal as u32).is_some() {
                return Err(IndexError::DuplicateId(doc.doc_id.clone()));
            }
        }
        let sentences: Vec<&str> = docs.iter().map(|d| d.sentence.as_str()).collect();
        let titles: Vec<&str> = docs.iter().map(|d| d.title.as_str()).collect();
        Ok(Self {
            sentence: FieldIndex::build(&sentences),
            title: FieldIndex::build(&titles),
            docs,
            ids,
        })
    }

    pub fn field(&self, field: Field) -> &FieldIndex {
        match field {
            Field::Sentence => &self.sentence,
            Field::Title => &self.title,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn docs(&self) -> &[KbDocument] {
        &self.docs
    }

    pub fn doc(&self, ordinal: u32) -> Option<&KbDocument> {
        self.docs.get(ordinal as usize)
    }

    pub fn doc_by_id(&self, doc_id: &str) -> Option<&KbDocument> {
        self.ids.get(doc_id).and_then(|&o| self.doc(o))
    }

    /// Runs the query through the analyzer and returns the top `k` documents
    /// with positive BM25 score, ranked by score descending with ties broken
    /// by ascending `doc_id`.
    pub fn search(
        &self,
        field: Field,
        query: &str,
        k: usize,
    ) -> Result<Vec<ScoredDoc>, IndexError> {
        let terms = tokenize_for_index(query);
        if terms.is_empty() {
            return Err(IndexError::EmptyQueryAfterAnalysis);
        }
        self.search_terms(field, &terms, k)
    }

    /// [`SearchIndex::search`] over pre-analyzed terms.
    pub fn search_terms(
        &self,
        field: Field,
        terms: &[Term],
        k: usize,
    ) -> Result<Vec<ScoredDoc>, IndexError> {
        if terms.is_empty() {
            return Err(IndexError::EmptyQueryAfterAnalysis);
        }
        let fi = self.field(field);
        let candidates = fi.candidates(terms);
        let scores = exec::try_map_vec(&candidates, |&ordinal| {
            bm25_score(terms, ordinal, fi).map(|s| (ordinal, s))
        })?;
        let mut hits: Vec<(u32, f64)> = scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        hits.sort_by(|(ord_a, score_a), (ord_b, score_b)| {
            score_b
                .partial_cmp(score_a)
                .expect("BM25 scores are finite")
                .then_with(|| {
                    self.docs[*ord_a as usize]
                        .doc_id
                        .cmp(&self.docs[*ord_b as usize].doc_id)
                })
        });
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .enumerate()
            .map(|(i, (ordinal, score))| ScoredDoc {
                doc_id: self.docs[ordinal as usize].doc_id.clone(),
                ordinal,
                score,
                rank: i + 1,
            })
            .collect())
    }
}

//! Retrieval-augmented named entity recognition.
//!
//! The crate wires five pieces together:
//!
//! - [`corpus`]: knowledge-base ingestion (anchor markup, sentence splitting)
//!   and CoNLL-style labeled data.
//! - [`index`]: an in-memory BM25 inverted index over the sentence and title
//!   fields of the knowledge base, with on-disk persistence.
//! - [`retrieval`]: sentence-level and iterative entity-mention retrieval,
//!   context rendering, token budgets, and per-token context flags.
//! - [`crf`]: a linear-chain CRF tagger over sparse features, trained with
//!   mini-batch gradient descent, decoded with (optionally BIO-constrained)
//!   Viterbi.
//! - [`ensemble`] and [`eval`]: span majority voting, CRF score averaging,
//!   and entity/mention F1 plus character-IoU reporting.
//!
//! [`pipeline`] composes them into reproducible experiment runs, and
//! generates synthetic benchmarks whose labels are only recoverable through
//! retrieval.
//!
//! With the default `parallel` feature, data-parallel stages (index
//! construction, batch retrieval and prediction, per-seed ensemble training)
//! run on rayon; compiled with `--no-default-features` the same code paths
//! run sequentially and produce identical output.

pub mod corpus;
pub mod crf;
pub mod ensemble;
pub mod eval;
pub(crate) mod exec;
pub mod index;
pub mod pipeline;
pub mod retrieval;

pub use corpus::{Anchor, CorpusError, EntitySpan, KbDocument, LabeledSentence};
pub use crf::{CrfError, CrfModel, CrfParams, LabelSet, TaggedSequence, TrainConfig, TrainReport};
pub use ensemble::{crf_score_average, majority_vote, EnsembleError, VoteConfig};
pub use eval::{
    char_iou, entity_f1, iou_report, mention_f1, EvalError, IouHistogram, MetricsReport,
    SentenceSpans,
};
pub use index::{Field, FieldIndex, IndexError, ScoredDoc, SearchIndex, Term};
pub use pipeline::{
    generate_synthetic, run_experiment, ExperimentConfig, MentionSource, PipelineError, RunOutcome,
    SyntheticData, SyntheticSpec,
};
pub use retrieval::{
    augment, context_features, AugmentedInput, ContextFlags, ContextOption, RetrievalConfig,
    RetrievalError, RetrievedContext,
};

//! End-to-end experiment runs.
//!
//! [`run_experiment`] wires the stages together: ingest the corpus, build or
//! load the index, retrieve contexts and flag both data splits, train one
//! tagger per seed, predict, vote, and evaluate. Every intermediate product
//! lands in the run directory so a run can be inspected and reproduced file
//! by file:
//!
//! ```text
//! run/
//!   config.json          experiment config, format versions, input checksums
//!   models/seed-*.json   one trained tagger per ensemble seed
//!   preds/seed-*.jsonl   per-model test predictions, one sentence per line
//!   ensemble.jsonl       voted predictions
//!   report.json          entity-level metrics of the voted predictions
//! ```
//!
//! Rerunning the same config writes byte-identical files.

mod synth;

pub use synth::{generate_synthetic, SyntheticData, SyntheticSpec};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    ingest_corpus, parse_conll, spans_from_bio, CorpusError, EntitySpan, LabeledSentence,
};
use crate::crf::{
    CrfError, CrfModel, TaggedSequence, TrainConfig, TrainReport, MODEL_FORMAT_VERSION,
};
use crate::ensemble::{majority_vote, EnsembleError, VoteConfig};
use crate::eval::{entity_f1, EvalError, MetricsReport, SentenceSpans};
use crate::exec;
use crate::index::{sha256_hex, IndexError, SearchIndex, INDEX_FORMAT_VERSION};
use crate::retrieval::{
    augment, iterative_retrieve, AugmentedInput, ContextFlags, RetrievalConfig, RetrievalError,
    RetrievedContext,
};

/// An experiment stage failure, labeled by stage.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("corpus stage: {0}")]
    Corpus(#[from] CorpusError),
    #[error("index stage: {0}")]
    Index(#[from] IndexError),
    #[error("retrieval stage: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("tagger stage: {0}")]
    Crf(#[from] CrfError),
    #[error("ensemble stage: {0}")]
    Ensemble(#[from] EnsembleError),
    #[error("evaluation stage: {0}")]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Where the mention queries for entity-retrieval turns come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MentionSource {
    /// Retrieval disabled: no contexts, all flags empty.
    None,
    /// Sentence-field retrieval only, no entity turns.
    Sentence,
    /// Entity turns query with the gold mentions.
    Gold,
    /// Entity turns query with the model's own predicted mentions.
    Predicted,
}

impl std::str::FromStr for MentionSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "sentence" => Ok(Self::Sentence),
            "gold" => Ok(Self::Gold),
            "predicted" => Ok(Self::Predicted),
            other => Err(format!(
                "unknown mention source `{other}`; use none, sentence, gold, or predicted"
            )),
        }
    }
}

/// A full experiment: data paths plus the settings of every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    /// Directory holding a saved index built from `corpus`. Built in memory
    /// when absent.
    #[serde(default)]
    pub index_dir: Option<PathBuf>,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_mentions")]
    pub train_mentions: MentionSource,
    #[serde(default = "default_mentions")]
    pub test_mentions: MentionSource,
    /// Number of models; seeds run from `train.seed` upward.
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    /// Majority-vote threshold, unused when `ensemble_size` is 1.
    #[serde(default = "default_vote_threshold")]
    pub vote_threshold: f64,
}

fn default_mentions() -> MentionSource {
    MentionSource::Sentence
}

fn default_ensemble_size() -> usize {
    1
}

fn default_vote_threshold() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn new(
        corpus: impl Into<PathBuf>,
        train_data: impl Into<PathBuf>,
        test_data: impl Into<PathBuf>,
    ) -> Self {
        Self {
            corpus: corpus.into(),
            train_data: train_data.into(),
            test_data: test_data.into(),
            index_dir: None,
            retrieval: RetrievalConfig::default(),
            train: TrainConfig::default(),
            train_mentions: default_mentions(),
            test_mentions: default_mentions(),
            ensemble_size: default_ensemble_size(),
            vote_threshold: default_vote_threshold(),
        }
    }
}

/// What [`run_experiment`] hands back in memory; the same data is on disk
/// under [`RunOutcome::run_dir`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Metrics of the voted predictions (of the single model when m = 1).
    pub report: MetricsReport,
    /// Per-model metrics, in seed order.
    pub model_reports: Vec<MetricsReport>,
    pub train_reports: Vec<TrainReport>,
    pub seeds: Vec<u64>,
    pub run_dir: PathBuf,
}

/// Runs the full experiment into `run_dir`, creating it if needed.
/// Existing files from a previous run of the same config are overwritten
/// with identical bytes.
pub fn run_experiment(
    config: &ExperimentConfig,
    run_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    let seeds = seed_range(config)?;

    let corpus_bytes = fs::read(&config.corpus)?;
    let train_bytes = fs::read(&config.train_data)?;
    let test_bytes = fs::read(&config.test_data)?;

    fs::create_dir_all(run_dir.join("models"))?;
    fs::create_dir_all(run_dir.join("preds"))?;
    write_config_record(config, &corpus_bytes, &train_bytes, &test_bytes, run_dir)?;

    let docs = ingest_corpus(corpus_bytes.as_slice())?;
    let index = match &config.index_dir {
        Some(dir) => {
            let loaded = SearchIndex::load(dir)?;
            if loaded.docs() != docs.as_slice() {
                return Err(PipelineError::InvalidConfig(format!(
                    "index at {} was not built from {}",
                    dir.display(),
                    config.corpus.display()
                )));
            }
            loaded
        }
        None => SearchIndex::build(docs)?,
    };

    let train_data = parse_conll(train_bytes.as_slice())?;
    let test_data = parse_conll(test_bytes.as_slice())?;

    let train_inputs = augmented_split(
        &index,
        &train_data,
        config.train_mentions,
        &config.retrieval,
        None,
        true,
    )?;
    let train_sequences: Vec<TaggedSequence> = train_inputs
        .iter()
        .map(TaggedSequence::from_augmented)
        .collect::<Result<_, _>>()?;

    let trained = exec::try_map_vec(&seeds, |&seed| {
        let train_config = TrainConfig {
            seed,
            ..config.train.clone()
        };
        CrfModel::train(&train_sequences, &train_config)
    })?;
    let (models, train_reports): (Vec<CrfModel>, Vec<TrainReport>) = trained.into_iter().unzip();
    for (model, seed) in models.iter().zip(&seeds) {
        model.save(&run_dir.join("models").join(format!("seed-{seed}.json")))?;
    }

    let model_preds: Vec<Vec<SentenceSpans>> = match config.test_mentions {
        MentionSource::Predicted => exec::try_map_vec(&models, |model| {
            let inputs = augmented_split(
                &index,
                &test_data,
                MentionSource::Predicted,
                &config.retrieval,
                Some(model),
                false,
            )?;
            predict_spans(model, &inputs)
        })?,
        source => {
            let inputs =
                augmented_split(&index, &test_data, source, &config.retrieval, None, false)?;
            exec::try_map_vec(&models, |model| predict_spans(model, &inputs))?
        }
    };
    for (preds, seed) in model_preds.iter().zip(&seeds) {
        write_jsonl(
            &run_dir.join("preds").join(format!("seed-{seed}.jsonl")),
            preds,
        )?;
    }

    let ensemble_preds: Vec<SentenceSpans> = if config.ensemble_size == 1 {
        model_preds[0].clone()
    } else {
        let vote = VoteConfig::new(config.vote_threshold, config.ensemble_size)?;
        (0..test_data.len())
            .map(|i| {
                let per_model: Vec<Vec<EntitySpan>> = model_preds
                    .iter()
                    .map(|preds| preds[i].spans.clone())
                    .collect();
                SentenceSpans {
                    sentence_id: sentence_id(i),
                    spans: majority_vote(&per_model, &vote),
                }
            })
            .collect()
    };
    write_jsonl(&run_dir.join("ensemble.jsonl"), &ensemble_preds)?;

    let gold = gold_spans(&test_data)?;
    let report = entity_f1(&gold, &ensemble_preds)?;
    let model_reports: Vec<MetricsReport> = model_preds
        .iter()
        .map(|preds| entity_f1(&gold, preds))
        .collect::<Result<_, _>>()?;

    let mut report_json =
        serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    report_json.push('\n');
    fs::write(run_dir.join("report.json"), report_json)?;

    Ok(RunOutcome {
        report,
        model_reports,
        train_reports,
        seeds,
        run_dir: run_dir.to_path_buf(),
    })
}

/// Validates the config and lays out one seed per model.
fn seed_range(config: &ExperimentConfig) -> Result<Vec<u64>, PipelineError> {
    if config.ensemble_size == 0 {
        return Err(PipelineError::InvalidConfig(
            "ensemble size must be at least 1".into(),
        ));
    }
    if config.train_mentions == MentionSource::Predicted {
        return Err(PipelineError::InvalidConfig(
            "training retrieval cannot use predicted mentions; the model does not exist yet".into(),
        ));
    }
    if config.ensemble_size > 1 {
        VoteConfig::new(config.vote_threshold, config.ensemble_size)?;
    }
    let last = config.ensemble_size as u64 - 1;
    if config.train.seed.checked_add(last).is_none() {
        return Err(PipelineError::InvalidConfig(format!(
            "seeds {} + 0..{} overflow",
            config.train.seed, config.ensemble_size
        )));
    }
    Ok((0..config.ensemble_size as u64)
        .map(|i| config.train.seed + i)
        .collect())
}

fn sentence_id(i: usize) -> String {
    format!("s{i}")
}

/// Retrieves and flags every sentence of a split. `model` drives the entity
/// turns for [`MentionSource::Predicted`] and is ignored otherwise; with
/// [`MentionSource::None`] the index is never queried and each sentence
/// passes through with empty contexts and default flags.
pub fn augmented_split(
    index: &SearchIndex,
    data: &[LabeledSentence],
    source: MentionSource,
    retrieval: &RetrievalConfig,
    model: Option<&CrfModel>,
    keep_gold: bool,
) -> Result<Vec<AugmentedInput>, PipelineError> {
    exec::try_map_vec(data, |sentence| {
        let gold_tags = keep_gold.then(|| sentence.tags.clone());
        if source == MentionSource::None {
            return Ok(AugmentedInput {
                tokens: sentence.tokens.clone(),
                gold_tags,
                contexts: vec![],
                token_budget: sentence.tokens.len(),
                flags: vec![ContextFlags::default(); sentence.tokens.len()],
            });
        }
        let contexts = retrieve_contexts(index, sentence, source, retrieval, model)?;
        Ok(augment(&sentence.tokens, gold_tags, contexts, retrieval)?)
    })
}

fn retrieve_contexts(
    index: &SearchIndex,
    sentence: &LabeledSentence,
    source: MentionSource,
    retrieval: &RetrievalConfig,
    model: Option<&CrfModel>,
) -> Result<Vec<RetrievedContext>, PipelineError> {
    match source {
        MentionSource::None => Ok(vec![]),
        MentionSource::Sentence => Ok(iterative_retrieve(
            index,
            &sentence.tokens,
            |_| vec![],
            retrieval,
        )?),
        MentionSource::Gold => {
            let spans = spans_from_bio(&sentence.tags)?;
            Ok(iterative_retrieve(
                index,
                &sentence.tokens,
                |_| spans.clone(),
                retrieval,
            )?)
        }
        MentionSource::Predicted => {
            let model = model.expect("predicted mentions need a trained model");
            let mut failure: Option<PipelineError> = None;
            let contexts = iterative_retrieve(
                index,
                &sentence.tokens,
                |input| match predict_entity_spans(model, input) {
                    Ok(spans) => spans,
                    Err(e) => {
                        failure = Some(e);
                        vec![]
                    }
                },
                retrieval,
            )?;
            match failure {
                Some(e) => Err(e),
                None => Ok(contexts),
            }
        }
    }
}

fn predict_entity_spans(
    model: &CrfModel,
    input: &AugmentedInput,
) -> Result<Vec<EntitySpan>, PipelineError> {
    let tags = model.predict(&input.tokens, &input.flags)?;
    Ok(spans_from_bio(&tags)?)
}

/// Decodes every input and converts the BIO tags to spans, one
/// [`SentenceSpans`] row per input with ids `s0`, `s1`, ... in order.
pub fn predict_spans(
    model: &CrfModel,
    inputs: &[AugmentedInput],
) -> Result<Vec<SentenceSpans>, PipelineError> {
    let mut out = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let spans = predict_entity_spans(model, input)?;
        out.push(SentenceSpans {
            sentence_id: sentence_id(i),
            spans,
        });
    }
    Ok(out)
}

/// Converts gold tags to spans with the same `s{i}` ids as
/// [`predict_spans`], so the two line up for evaluation.
pub fn gold_spans(data: &[LabeledSentence]) -> Result<Vec<SentenceSpans>, PipelineError> {
    data.iter()
        .enumerate()
        .map(|(i, sentence)| {
            Ok(SentenceSpans {
                sentence_id: sentence_id(i),
                spans: spans_from_bio(&sentence.tags)?,
            })
        })
        .collect()
}

fn write_config_record(
    config: &ExperimentConfig,
    corpus: &[u8],
    train: &[u8],
    test: &[u8],
    run_dir: &Path,
) -> Result<(), PipelineError> {
    let record = serde_json::json!({
        "config": config,
        "versions": {
            "model_format": MODEL_FORMAT_VERSION,
            "index_format": INDEX_FORMAT_VERSION,
        },
        "checksums": {
            "corpus_sha256": sha256_hex(corpus),
            "train_sha256": sha256_hex(train),
            "test_sha256": sha256_hex(test),
        },
    });
    let mut text = serde_json::to_string_pretty(&record).expect("config serialization cannot fail");
    text.push('\n');
    fs::write(run_dir.join("config.json"), text)?;
    Ok(())
}

fn write_jsonl(path: &Path, rows: &[SentenceSpans]) -> Result<(), PipelineError> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("span rows serialize"));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

//! Implementations behind the subcommands: thin IO and formatting around
//! the library calls, with every failure mapped to an exit-code class.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use kbner::corpus::{ingest_corpus, parse_conll, LabeledSentence};
use kbner::index::INDEX_FORMAT_VERSION;
use kbner::pipeline::{augmented_split, gold_spans, predict_spans};
use kbner::retrieval::{contexts_from_hits, ContextOption};
use kbner::{
    entity_f1, iou_report, majority_vote, run_experiment, AugmentedInput, ContextFlags,
    CorpusError, CrfError, CrfModel, EntitySpan, EvalError, ExperimentConfig, Field, IndexError,
    MentionSource, MetricsReport, PipelineError, RetrievalConfig, RetrievalError, SearchIndex,
    SentenceSpans, SyntheticSpec, TaggedSequence, TrainConfig, VoteConfig,
};

/// Failure classes, one per nonzero exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: bad flags or an invalid configuration.
    Usage(String),
    /// Exit 2: an input file is missing, unreadable, or malformed.
    Data(String),
    /// Exit 3: an internal invariant broke.
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Internal(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(msg) => CliError::Usage(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CrfError> for CliError {
    fn from(e: CrfError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = String::from_utf8(read_bytes(path)?)
        .map_err(|e| CliError::Data(format!("{} is not UTF-8: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn json_doc<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("cannot serialize result: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut text = String::new();
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| CliError::Internal(format!("cannot serialize result: {e}")))?;
        text.push_str(&line);
        text.push('\n');
    }
    Ok(text)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Internal(format!("cannot write stdout: {e}"))),
    }
}

fn parse_data(path: &Path) -> Result<Vec<LabeledSentence>, CliError> {
    Ok(parse_conll(read_bytes(path)?.as_slice())?)
}

fn load_model(path: &Path) -> Result<CrfModel, CliError> {
    CrfModel::load(path)
        .map_err(|e| CliError::Data(format!("cannot load model {}: {e}", path.display())))
}

/// Usage check shared by train and predict, run before any file is read.
fn require_index_for(mentions: MentionSource, index_dir: Option<&Path>) -> Result<(), CliError> {
    if mentions != MentionSource::None && index_dir.is_none() {
        return Err(CliError::Usage(
            "--index is required when --mentions is not none".into(),
        ));
    }
    Ok(())
}

/// Builds the model inputs for a split, loading the index only when a
/// mention source actually needs retrieval.
fn augmented_inputs(
    index_dir: Option<&Path>,
    sentences: &[LabeledSentence],
    source: MentionSource,
    retrieval: &RetrievalConfig,
    model: Option<&CrfModel>,
    keep_gold: bool,
) -> Result<Vec<AugmentedInput>, CliError> {
    if source == MentionSource::None {
        return Ok(sentences
            .iter()
            .map(|s| AugmentedInput {
                tokens: s.tokens.clone(),
                gold_tags: keep_gold.then(|| s.tags.clone()),
                contexts: vec![],
                token_budget: s.tokens.len(),
                flags: vec![ContextFlags::default(); s.tokens.len()],
            })
            .collect());
    }
    let dir = index_dir
        .ok_or_else(|| CliError::Usage("--index is required when --mentions is not none".into()))?;
    let index = SearchIndex::load(dir)?;
    log::info!("loaded index with {} documents", index.doc_count());
    Ok(augmented_split(
        &index, sentences, source, retrieval, model, keep_gold,
    )?)
}

pub fn build_index(corpus: &Path, out: &Path, pretty: bool) -> Result<(), CliError> {
    let docs = ingest_corpus(read_bytes(corpus)?.as_slice())?;
    let index = SearchIndex::build(docs)?;
    index.save(out)?;
    log::info!(
        "indexed {} documents into {}",
        index.doc_count(),
        out.display()
    );

    let text = if pretty {
        format!(
            "indexed {} documents into {}\n",
            index.doc_count(),
            out.display()
        )
    } else {
        json_doc(&serde_json::json!({
            "documents": index.doc_count(),
            "index_dir": out,
            "format_version": INDEX_FORMAT_VERSION,
        }))?
    };
    emit(None, &text)
}

pub fn retrieve(
    index_dir: &Path,
    query: &str,
    field: Field,
    k: usize,
    option: ContextOption,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    let index = SearchIndex::load(index_dir)?;
    let hits = index.search(field, query, k)?;
    let contexts = contexts_from_hits(&index, &hits, option)?;
    log::info!("{} contexts for {query:?}", contexts.len());

    let text = if pretty {
        let mut s = String::new();
        for c in &contexts {
            s.push_str(&format!(
                "{:>3}  {}  {}\n     {}\n",
                c.rank, c.source_doc_id, c.title, c.text
            ));
        }
        s
    } else {
        jsonl(&contexts)?
    };
    emit(out, &text)
}

pub fn train(
    data: &Path,
    out: &Path,
    index_dir: Option<&Path>,
    mentions: MentionSource,
    retrieval: &RetrievalConfig,
    config: &TrainConfig,
    pretty: bool,
) -> Result<(), CliError> {
    require_index_for(mentions, index_dir)?;
    let sentences = parse_data(data)?;
    let inputs = augmented_inputs(index_dir, &sentences, mentions, retrieval, None, true)?;
    let sequences: Vec<TaggedSequence> = inputs
        .iter()
        .map(TaggedSequence::from_augmented)
        .collect::<Result<_, _>>()?;

    let (model, report) = CrfModel::train(&sequences, config)?;
    model.save(out)?;
    log::info!("model written to {}", out.display());

    let text = if pretty {
        let first = report.epoch_losses.first().copied().unwrap_or(0.0);
        let last = report.epoch_losses.last().copied().unwrap_or(0.0);
        format!(
            "trained on {} sentences: {} features, {} labels\n\
             mean batch loss {first:.4} -> {last:.4} over {} epochs\n\
             model written to {}\n",
            report.n_sequences,
            report.n_features,
            report.n_labels,
            report.epoch_losses.len(),
            out.display()
        )
    } else {
        json_doc(&report)?
    };
    emit(None, &text)
}

pub fn predict(
    model_path: &Path,
    data: &Path,
    index_dir: Option<&Path>,
    mentions: MentionSource,
    retrieval: &RetrievalConfig,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    require_index_for(mentions, index_dir)?;
    let model = load_model(model_path)?;
    let sentences = parse_data(data)?;
    let inputs = augmented_inputs(
        index_dir,
        &sentences,
        mentions,
        retrieval,
        Some(&model),
        false,
    )?;
    let rows = predict_spans(&model, &inputs)?;

    let text = if pretty {
        span_table(&rows)
    } else {
        jsonl(&rows)?
    };
    emit(out, &text)
}

fn span_table(rows: &[SentenceSpans]) -> String {
    let mut s = String::new();
    for row in rows {
        let spans = if row.spans.is_empty() {
            "-".to_string()
        } else {
            row.spans
                .iter()
                .map(|sp| format!("{}..{} {}", sp.start, sp.end, sp.label))
                .collect::<Vec<_>>()
                .join("; ")
        };
        s.push_str(&format!("{}\t{spans}\n", row.sentence_id));
    }
    s
}

pub fn ensemble(
    preds: &[std::path::PathBuf],
    threshold: f64,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    let lists: Vec<Vec<SentenceSpans>> = preds
        .iter()
        .map(|p| read_jsonl(p))
        .collect::<Result<_, _>>()?;
    let first = &lists[0];
    for (path, list) in preds.iter().zip(&lists).skip(1) {
        let same = list.len() == first.len()
            && list
                .iter()
                .zip(first)
                .all(|(a, b)| a.sentence_id == b.sentence_id);
        if !same {
            return Err(CliError::Data(format!(
                "{} disagrees with {} on sentence ids",
                path.display(),
                preds[0].display()
            )));
        }
    }

    let config =
        VoteConfig::new(threshold, lists.len()).map_err(|e| CliError::Usage(e.to_string()))?;
    let rows: Vec<SentenceSpans> = (0..first.len())
        .map(|i| {
            let per_model: Vec<Vec<EntitySpan>> =
                lists.iter().map(|list| list[i].spans.clone()).collect();
            SentenceSpans {
                sentence_id: first[i].sentence_id.clone(),
                spans: majority_vote(&per_model, &config),
            }
        })
        .collect();

    let text = if pretty {
        span_table(&rows)
    } else {
        jsonl(&rows)?
    };
    emit(out, &text)
}

pub fn evaluate(
    gold: &Path,
    pred: &Path,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    let gold_rows = gold_spans(&parse_data(gold)?)?;
    let pred_rows: Vec<SentenceSpans> = read_jsonl(pred)?;
    let report = entity_f1(&gold_rows, &pred_rows)?;

    let text = if pretty {
        metrics_table(&report)
    } else {
        json_doc(&report)?
    };
    emit(out, &text)
}

fn metrics_table(report: &MetricsReport) -> String {
    let mut s = format!(
        "{:<12} {:>5} {:>5} {:>5} {:>10} {:>8} {:>8}\n",
        "label", "tp", "pred", "gold", "precision", "recall", "f1"
    );
    for (label, m) in &report.per_label {
        s.push_str(&format!(
            "{:<12} {:>5} {:>5} {:>5} {:>10.4} {:>8.4} {:>8.4}\n",
            label, m.tp, m.predicted, m.gold, m.precision, m.recall, m.f1
        ));
    }
    s.push_str(&format!(
        "macro F1   {:.4}\nmicro F1   {:.4}\nmention F1 {:.4}\n",
        report.macro_f1, report.micro_f1, report.mention_f1
    ));
    s
}

#[derive(Deserialize)]
struct PairRow {
    query: String,
    result: String,
}

pub fn iou_report_cmd(
    pairs_path: &Path,
    bins: usize,
    tsv: bool,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let pairs: Vec<(String, String)> = read_jsonl::<PairRow>(pairs_path)?
        .into_iter()
        .map(|row| (row.query, row.result))
        .collect();
    let histogram = iou_report(&pairs, bins);

    let text = if tsv {
        let mut s = String::new();
        for (i, count) in histogram.counts.iter().enumerate() {
            s.push_str(&format!(
                "{}\t{}\t{count}\n",
                histogram.bin_edges[i],
                histogram.bin_edges[i + 1]
            ));
        }
        s
    } else if pretty {
        let mut s = String::new();
        for (i, count) in histogram.counts.iter().enumerate() {
            s.push_str(&format!(
                "[{:.2}, {:.2}{}  {count}\n",
                histogram.bin_edges[i],
                histogram.bin_edges[i + 1],
                if i + 1 == histogram.counts.len() {
                    "]"
                } else {
                    ")"
                }
            ));
        }
        s.push_str(&format!("samples: {}\n", histogram.sample_count));
        s
    } else {
        json_doc(&histogram)?
    };
    emit(out, &text)
}

#[allow(clippy::too_many_arguments)]
pub fn synth(
    entities: usize,
    labels: &str,
    docs_per_entity: usize,
    ambiguity: f64,
    train_sentences: usize,
    test_sentences: usize,
    seed: u64,
    out: &Path,
    pretty: bool,
) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        entities,
        labels: labels.split(',').map(|l| l.trim().to_string()).collect(),
        docs_per_entity,
        ambiguity_rate: ambiguity,
        train_sentences,
        test_sentences,
        seed,
    };
    let data = kbner::generate_synthetic(&spec)?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;

    let corpus = out.join("corpus.jsonl");
    let train = out.join("train.conll");
    let test = out.join("test.conll");
    for (path, content) in [
        (&corpus, &data.corpus_jsonl),
        (&train, &data.train_conll),
        (&test, &data.test_conll),
    ] {
        fs::write(path, content)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    let documents = data.corpus_jsonl.lines().count();

    let text = if pretty {
        format!(
            "wrote {} ({documents} documents), {} ({train_sentences} sentences), \
             {} ({test_sentences} sentences)\n",
            corpus.display(),
            train.display(),
            test.display()
        )
    } else {
        json_doc(&serde_json::json!({
            "corpus": corpus,
            "train": train,
            "test": test,
            "documents": documents,
            "train_sentences": train_sentences,
            "test_sentences": test_sentences,
        }))?
    };
    emit(None, &text)
}

pub fn run(
    config_path: &Path,
    run_dir: &Path,
    out: Option<&Path>,
    pretty: bool,
) -> Result<(), CliError> {
    let config: ExperimentConfig = serde_json::from_slice(&read_bytes(config_path)?)
        .map_err(|e| CliError::Data(format!("bad config {}: {e}", config_path.display())))?;
    let outcome = run_experiment(&config, run_dir)?;
    log::info!(
        "run with seeds {:?} complete; artifacts in {}",
        outcome.seeds,
        outcome.run_dir.display()
    );

    let text = if pretty {
        format!(
            "{}seeds: {:?}\nartifacts: {}\n",
            metrics_table(&outcome.report),
            outcome.seeds,
            outcome.run_dir.display()
        )
    } else {
        json_doc(&outcome.report)?
    };
    emit(out, &text)
}

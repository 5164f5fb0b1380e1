//! `kbner`: every pipeline stage as a subcommand.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
//! error. Results go to stdout (or the file named by `--out` where offered);
//! all diagnostics go to stderr, with verbosity controlled by the
//! `KBNER_LOG` environment variable (error, warn, info, debug).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use kbner::retrieval::ContextOption;
use kbner::{Field, MentionSource, RetrievalConfig, TrainConfig};

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "kbner",
    version,
    about = "Retrieval-augmented named entity recognition"
)]
struct Cli {
    /// Worker threads for data-parallel stages; 0 means all cores. Output
    /// is identical for any thread count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Human-readable tables instead of JSON/JSONL.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a search index from a knowledge-base corpus (JSONL).
    BuildIndex {
        /// Corpus file: one JSON object per line with id, title, paragraph.
        #[arg(long)]
        corpus: PathBuf,
        /// Directory to write the index into.
        #[arg(long)]
        out: PathBuf,
    },

    /// Query an index and print the rendered contexts as JSONL.
    Retrieve {
        /// Index directory written by build-index.
        #[arg(long)]
        index: PathBuf,
        /// Query text; terms are whitespace-separated.
        #[arg(long)]
        query: String,
        /// Field to search.
        #[arg(long, value_enum, default_value = "sentence")]
        field: FieldArg,
        /// Results to return.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Context rendering.
        #[arg(long, value_enum, default_value = "para")]
        option: OptionArg,
        /// Write results here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Train a CRF tagger on CoNLL data, optionally retrieval-augmented.
    Train {
        /// Training data: CoNLL token/tag lines, blank line between sentences.
        #[arg(long)]
        data: PathBuf,
        /// File to write the trained model into.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        augment: AugmentArgs,
        /// Training epochs.
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        /// Gradient step size.
        #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
        learning_rate: f64,
        /// L2 penalty weight.
        #[arg(long, default_value_t = TrainConfig::default().l2)]
        l2: f64,
        /// Sentences per gradient step.
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch_size: usize,
        /// Shuffling seed.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },

    /// Tag CoNLL sentences with a trained model; emits span JSONL.
    Predict {
        /// Model file written by train.
        #[arg(long)]
        model: PathBuf,
        /// Sentences to tag, in CoNLL form.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        augment: AugmentArgs,
        /// Write predictions here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Majority-vote several span JSONL prediction files into one.
    Ensemble {
        /// Two or more prediction files over the same sentences.
        #[arg(long, num_args = 1.., required = true)]
        preds: Vec<PathBuf>,
        /// A span is kept when votes exceed threshold times the model count.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Write the voted predictions here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Score span predictions against CoNLL gold data.
    Evaluate {
        /// Gold data in CoNLL form; sentence ids are s0, s1, ... in order.
        #[arg(long)]
        gold: PathBuf,
        /// Predictions as span JSONL.
        #[arg(long)]
        pred: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Histogram the character IoU of query/result pairs.
    IouReport {
        /// JSONL with one {"query", "result"} object per line.
        #[arg(long)]
        pairs: PathBuf,
        /// Number of uniform bins over [0, 1].
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Emit bin_lo/bin_hi/count TSV instead of JSON.
        #[arg(long)]
        tsv: bool,
        /// Write the histogram here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Generate a synthetic corpus and train/test split.
    Synth {
        /// Distinct entities in the knowledge base.
        #[arg(long, default_value_t = 50)]
        entities: usize,
        /// Comma-separated label names, up to three.
        #[arg(long, default_value = "LOC,ORG,PER")]
        labels: String,
        /// Knowledge-base documents per entity.
        #[arg(long, default_value_t = 1)]
        docs_per_entity: usize,
        /// Fraction of entities whose surface is shared across labels.
        #[arg(long, default_value_t = 0.5)]
        ambiguity: f64,
        /// Training sentences.
        #[arg(long, default_value_t = 500)]
        train: usize,
        /// Test sentences.
        #[arg(long, default_value_t = 200)]
        test: usize,
        /// Generation seed.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory for corpus.jsonl, train.conll, and test.conll.
        #[arg(long)]
        out: PathBuf,
    },

    /// Run a full experiment from a JSON config into a run directory.
    Run {
        /// Experiment config file.
        #[arg(long)]
        config: PathBuf,
        /// Directory for models, predictions, and the report.
        #[arg(long)]
        run_dir: PathBuf,
        /// Write the final report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Retrieval flags shared by train and predict.
#[derive(Args)]
struct AugmentArgs {
    /// Index directory; required unless --mentions is none.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Where retrieval queries come from.
    #[arg(long, value_enum, default_value = "none")]
    mentions: MentionArg,
    /// Results per query.
    #[arg(long, default_value_t = RetrievalConfig::default().k)]
    k: usize,
    /// Entity-retrieval turns after the sentence round.
    #[arg(long, default_value_t = RetrievalConfig::default().turns)]
    turns: usize,
    /// Context rendering.
    #[arg(long, value_enum, default_value = "para")]
    option: OptionArg,
    /// Token budget for the sentence plus its contexts.
    #[arg(long, default_value_t = RetrievalConfig::default().token_budget)]
    budget: usize,
}

impl AugmentArgs {
    fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            k: self.k,
            turns: self.turns,
            option: self.option.into(),
            token_budget: self.budget,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Sentence,
    Title,
}

impl From<FieldArg> for Field {
    fn from(value: FieldArg) -> Self {
        match value {
            FieldArg::Sentence => Field::Sentence,
            FieldArg::Title => Field::Title,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptionArg {
    Para,
    Sent,
    SentNolink,
}

impl From<OptionArg> for ContextOption {
    fn from(value: OptionArg) -> Self {
        match value {
            OptionArg::Para => ContextOption::Para,
            OptionArg::Sent => ContextOption::Sent,
            OptionArg::SentNolink => ContextOption::SentNolink,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MentionArg {
    None,
    Sentence,
    Gold,
    Predicted,
}

impl From<MentionArg> for MentionSource {
    fn from(value: MentionArg) -> Self {
        match value {
            MentionArg::None => MentionSource::None,
            MentionArg::Sentence => MentionSource::Sentence,
            MentionArg::Gold => MentionSource::Gold,
            MentionArg::Predicted => MentionSource::Predicted,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KBNER_LOG", "warn"))
        .format_timestamp(None)
        .init();

    match configure_threads(cli.threads).and_then(|()| dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kbner: {e}");
            ExitCode::from(e.code())
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: usize) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: usize) -> Result<(), CliError> {
    if threads > 0 {
        log::debug!("built without the parallel feature; --threads has no effect");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let pretty = cli.pretty;
    match cli.command {
        Command::BuildIndex { corpus, out } => commands::build_index(&corpus, &out, pretty),
        Command::Retrieve {
            index,
            query,
            field,
            k,
            option,
            out,
        } => commands::retrieve(
            &index,
            &query,
            field.into(),
            k,
            option.into(),
            out.as_deref(),
            pretty,
        ),
        Command::Train {
            data,
            out,
            augment,
            epochs,
            learning_rate,
            l2,
            batch_size,
            seed,
        } => {
            if augment.mentions == MentionArg::Predicted {
                return Err(CliError::Usage(
                    "training cannot use predicted mentions; train a model first".into(),
                ));
            }
            let config = TrainConfig {
                epochs,
                learning_rate,
                l2,
                batch_size,
                seed,
            };
            commands::train(
                &data,
                &out,
                augment.index.as_deref(),
                augment.mentions.into(),
                &augment.retrieval(),
                &config,
                pretty,
            )
        }
        Command::Predict {
            model,
            data,
            augment,
            out,
        } => commands::predict(
            &model,
            &data,
            augment.index.as_deref(),
            augment.mentions.into(),
            &augment.retrieval(),
            out.as_deref(),
            pretty,
        ),
        Command::Ensemble {
            preds,
            threshold,
            out,
        } => commands::ensemble(&preds, threshold, out.as_deref(), pretty),
        Command::Evaluate { gold, pred, out } => {
            commands::evaluate(&gold, &pred, out.as_deref(), pretty)
        }
        Command::IouReport {
            pairs,
            bins,
            tsv,
            out,
        } => commands::iou_report_cmd(&pairs, bins, tsv, out.as_deref(), pretty),
        Command::Synth {
            entities,
            labels,
            docs_per_entity,
            ambiguity,
            train,
            test,
            seed,
            out,
        } => commands::synth(
            entities,
            &labels,
            docs_per_entity,
            ambiguity,
            train,
            test,
            seed,
            &out,
            pretty,
        ),
        Command::Run {
            config,
            run_dir,
            out,
        } => commands::run(&config, &run_dir, out.as_deref(), pretty),
    }
}

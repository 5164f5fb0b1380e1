//! Synthetic benchmark generator.
//!
//! The generated task is built so that entity labels flow through retrieval
//! and nowhere else. Each entity type marks its knowledge-base documents
//! differently:
//!
//! - type 0: the surface is an anchor and appears in the document title,
//! - type 1: the surface is an anchor, the title is a codename only,
//! - type 2: the surface appears plain, in both title and sentence.
//!
//! A tagger sees those differences only through the per-token context flags,
//! so at most three entity types can be told apart and `labels` is capped at
//! three.
//!
//! A slice of the inventory comes in pairs that share one surface string
//! across two different types. Their documents are tied to entity-specific
//! cue words which also appear in every labeled sentence mentioning the
//! entity, but never next to the mention, so a window-one tagger cannot use
//! them while sentence retrieval can. All documents have equally long
//! sentences, making the cue overlap decide the ranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Size of the shared filler vocabulary labeled sentences draw from.
const FILLER_POOL: usize = 40;

/// Parameters of the generated benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of knowledge-base entities.
    pub entities: usize,
    /// Entity type names, at most three (one per markup pattern).
    pub labels: Vec<String>,
    pub docs_per_entity: usize,
    /// Fraction of entities whose surface is shared with a second entity of
    /// a different type, rounded down to whole pairs.
    pub ambiguity_rate: f64,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            entities: 50,
            labels: vec!["LOC".into(), "ORG".into(), "PER".into()],
            docs_per_entity: 1,
            ambiguity_rate: 0.5,
            train_sentences: 500,
            test_sentences: 200,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.entities == 0
            || self.docs_per_entity == 0
            || self.train_sentences == 0
            || self.test_sentences == 0
        {
            return invalid("all synthetic counts must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return invalid(format!(
                "ambiguity rate {} is outside [0, 1]",
                self.ambiguity_rate
            ));
        }
        if self.labels.is_empty() || self.labels.len() > 3 {
            return invalid(format!(
                "{} entity types given, the markup patterns support 1 to 3",
                self.labels.len()
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for label in &self.labels {
            if label.is_empty()
                || label == "O"
                || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return invalid(format!("entity type `{label}` is not a plain identifier"));
            }
            if !seen.insert(label) {
                return invalid(format!("entity type `{label}` appears twice"));
            }
        }
        if self.ambiguity_rate > 0.0 && self.labels.len() < 2 {
            return invalid("shared surfaces need at least two entity types".into());
        }
        Ok(())
    }
}

/// The three generated files, as file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus_jsonl: String,
    pub train_conll: String,
    pub test_conll: String,
}

struct Entity {
    surface: String,
    label_idx: usize,
    cue_a: String,
    cue_b: String,
}

fn entities_for(spec: &SyntheticSpec) -> Vec<Entity> {
    let pairs = (spec.ambiguity_rate * spec.entities as f64 / 2.0).floor() as usize;
    (0..spec.entities)
        .map(|i| {
            let surface = if i < 2 * pairs {
                format!("surf{}", i / 2)
            } else {
                format!("usurf{i}")
            };
            Entity {
                surface,
                label_idx: i % spec.labels.len(),
                cue_a: format!("cue{i}a"),
                cue_b: format!("cue{i}b"),
            }
        })
        .collect()
}

fn corpus_lines(spec: &SyntheticSpec, entities: &[Entity]) -> String {
    let mut out = String::new();
    for (i, entity) in entities.iter().enumerate() {
        for d in 0..spec.docs_per_entity {
            let codename = format!("code{i}d{d}");
            let surface = &entity.surface;
            let (title, mention) = match entity.label_idx {
                0 => {
                    let title = format!("{surface} {codename}");
                    let mention = format!("<e:{title}>{surface}</e>");
                    (title, mention)
                }
                1 => (codename.clone(), format!("<e:{codename}>{surface}</e>")),
                _ => (format!("{surface} {codename}"), surface.clone()),
            };
            let paragraph = format!(
                "{} d{i}w{d}a d{i}w{d}b {mention} d{i}w{d}c d{i}w{d}d {}.",
                entity.cue_a, entity.cue_b
            );
            let line = serde_json::json!({
                "id": format!("e{i}d{d}"),
                "title": title,
                "paragraph": paragraph,
                "language": "en",
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    out
}

fn labeled_block(
    spec: &SyntheticSpec,
    entities: &[Entity],
    idx: usize,
    rng: &mut ChaCha8Rng,
) -> String {
    let entity = &entities[idx % entities.len()];
    let mut filler = || format!("f{}", rng.gen_range(0..FILLER_POOL));
    let tokens = [
        entity.cue_a.clone(),
        filler(),
        filler(),
        entity.surface.clone(),
        filler(),
        filler(),
        entity.cue_b.clone(),
        ".".to_string(),
    ];
    let label = &spec.labels[entity.label_idx];
    let mut block = String::new();
    for (i, token) in tokens.iter().enumerate() {
        let tag = if i == 3 {
            format!("B-{label}")
        } else {
            "O".to_string()
        };
        block.push_str(token);
        block.push('\t');
        block.push_str(&tag);
        block.push('\n');
    }
    block
}

fn conll_file(
    spec: &SyntheticSpec,
    entities: &[Entity],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut out = String::new();
    for idx in 0..count {
        if idx > 0 {
            out.push('\n');
        }
        out.push_str(&labeled_block(spec, entities, idx, rng));
    }
    out
}

/// Generates the benchmark files. The same spec always produces byte-equal
/// output.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, PipelineError> {
    spec.validate()?;
    let entities = entities_for(spec);
    let corpus_jsonl = corpus_lines(spec, &entities);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train_conll = conll_file(spec, &entities, spec.train_sentences, &mut rng);
    let test_conll = conll_file(spec, &entities, spec.test_sentences, &mut rng);
    Ok(SyntheticData {
        corpus_jsonl,
        train_conll,
        test_conll,
    })
}

//! Linear-chain conditional random field tagging.
//!
//! A [`CrfModel`] couples a [`LabelSet`], a frozen [`FeatureMap`], and the
//! parameter block [`CrfParams`]: one emission weight per (feature, label),
//! one transition weight per ordered label pair, and one start weight per
//! label. A path's score is the sum of those weights along it. The
//! [`inference`] module holds the log-space forward/backward recursions and
//! Viterbi decoding; [`train`] holds the exact negative log-likelihood
//! gradient and mini-batch gradient descent.
//!
//! Decoding applies a BIO transition mask, so predicted tag sequences never
//! contain an `I-` tag without its entity's opening tag.

pub mod features;
pub mod inference;
pub mod train;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::retrieval::{AugmentedInput, ContextFlags};

pub use features::FeatureMap;
pub use inference::TransitionMask;
pub use train::{nll_and_gradient, EncodedSequence};

/// On-disk model format version; bumped on any incompatible layout change.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("label `{0}` is not in the model's label set")]
    UnknownLabel(String),
    #[error("sequence has {tokens} tokens but {other} {what}")]
    LengthMismatch {
        tokens: usize,
        other: usize,
        what: &'static str,
    },
    #[error("cannot train on an empty data set")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("model file has format version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The model's tag inventory, in index order.
///
/// Construction is canonical: `O` always sits at index 0, the remaining tags
/// follow in lexicographic order, and every `I-X` seen brings `B-X` with it,
/// so the BIO transition mask never leaves a label without a legal
/// predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    /// Canonical label set for a tag collection.
    pub fn from_tags<'a, I>(tags: I) -> Result<Self, CrfError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut set = std::collections::BTreeSet::new();
        for tag in tags {
            crate::corpus::check_bio_tag(tag, None)?;
            if let Some(kind) = tag.strip_prefix("I-") {
                set.insert(format!("B-{kind}"));
            }
            set.insert(tag.to_string());
        }
        set.remove("O");
        let mut labels = vec!["O".to_string()];
        labels.extend(set);
        Self::from_labels(labels)
    }

    /// Rebuilds a label set in the given index order, e.g. from a model file.
    pub fn from_labels(labels: Vec<String>) -> Result<Self, CrfError> {
        if labels.is_empty() {
            return Err(CrfError::Corrupt("empty label set".into()));
        }
        let mut index = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            crate::corpus::check_bio_tag(label, None)?;
            if index.insert(label.clone(), i).is_some() {
                return Err(CrfError::Corrupt(format!("duplicate label `{label}`")));
            }
        }
        for label in &labels {
            if let Some(kind) = label.strip_prefix("I-") {
                if !index.contains_key(&format!("B-{kind}")) {
                    return Err(CrfError::Corrupt(format!(
                        "label set has `{label}` but no `B-{kind}`"
                    )));
                }
            }
        }
        Ok(Self { labels, index })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// BIO decoding mask: `I-X` is reachable only from `B-X` or `I-X`, and
    /// never from the start of the sequence.
    pub fn transition_mask(&self) -> TransitionMask {
        let t = self.len();
        let start_allowed: Vec<bool> = self.labels.iter().map(|l| !l.starts_with("I-")).collect();
        let mut allowed = vec![vec![true; t]; t];
        for (to, label) in self.labels.iter().enumerate() {
            if let Some(kind) = label.strip_prefix("I-") {
                for (from, prev) in self.labels.iter().enumerate() {
                    let opens = prev == &format!("B-{kind}") || prev == &format!("I-{kind}");
                    allowed[from][to] = opens;
                }
            }
        }
        TransitionMask {
            start_allowed,
            allowed,
        }
    }
}

/// One training sequence: tokens, gold BIO tags, and per-token context flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub flags: Vec<ContextFlags>,
}

impl TaggedSequence {
    pub fn new(
        tokens: Vec<String>,
        tags: Vec<String>,
        flags: Vec<ContextFlags>,
    ) -> Result<Self, CrfError> {
        if tokens.is_empty() {
            return Err(CrfError::Corpus(CorpusError::EmptySentence(0)));
        }
        if tokens.len() != tags.len() {
            return Err(CrfError::LengthMismatch {
                tokens: tokens.len(),
                other: tags.len(),
                what: "tags",
            });
        }
        if tokens.len() != flags.len() {
            return Err(CrfError::LengthMismatch {
                tokens: tokens.len(),
                other: flags.len(),
                what: "flags",
            });
        }
        for tag in &tags {
            crate::corpus::check_bio_tag(tag, None)?;
        }
        Ok(Self {
            tokens,
            tags,
            flags,
        })
    }

    /// Pairs an augmented input with its gold tags.
    pub fn from_augmented(input: &AugmentedInput) -> Result<Self, CrfError> {
        let tags = input
            .gold_tags
            .clone()
            .ok_or_else(|| CrfError::Corrupt("augmented input has no gold tags".into()))?;
        Self::new(input.tokens.clone(), tags, input.flags.clone())
    }
}

/// CRF parameters: emission weights `w[feature][label]`, transition weights
/// `b[from][to]`, and start weights `start[label]`. There is no stop weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub start: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(n_features: usize, n_labels: usize) -> Self {
        Self {
            w: vec![vec![0.0; n_labels]; n_features],
            b: vec![vec![0.0; n_labels]; n_labels],
            start: vec![0.0; n_labels],
        }
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    pub fn n_labels(&self) -> usize {
        self.start.len()
    }

    pub fn norm_sq(&self) -> f64 {
        let rows = self.w.iter().chain(self.b.iter());
        rows.flatten().chain(self.start.iter()).map(|v| v * v).sum()
    }

    /// `self += c * other`, cell by cell.
    pub fn add_scaled(&mut self, other: &CrfParams, c: f64) {
        debug_assert_eq!(self.n_features(), other.n_features());
        debug_assert_eq!(self.n_labels(), other.n_labels());
        for (row, orow) in self.w.iter_mut().zip(&other.w) {
            for (v, o) in row.iter_mut().zip(orow) {
                *v += c * o;
            }
        }
        for (row, orow) in self.b.iter_mut().zip(&other.b) {
            for (v, o) in row.iter_mut().zip(orow) {
                *v += c * o;
            }
        }
        for (v, o) in self.start.iter_mut().zip(&other.start) {
            *v += c * o;
        }
    }
}

/// Gradient-descent settings for [`CrfModel::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.2,
            l2: 1e-4,
            batch_size: 8,
            seed: 42,
        }
    }
}

/// Per-epoch training trace returned next to the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch objective per epoch.
    pub epoch_losses: Vec<f64>,
    pub n_sequences: usize,
    pub n_features: usize,
    pub n_labels: usize,
}

/// A trained linear-chain CRF.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    labels: LabelSet,
    features: FeatureMap,
    params: CrfParams,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    labels: Vec<String>,
    features: Vec<String>,
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    start: Vec<f64>,
}

impl CrfModel {
    pub fn new(
        labels: LabelSet,
        features: FeatureMap,
        params: CrfParams,
    ) -> Result<Self, CrfError> {
        check_dims(&labels, &features, &params)?;
        Ok(Self {
            labels,
            features,
            params,
        })
    }

    /// Fits a model to `data` with mini-batch gradient descent from zero
    /// initialization. The label set and feature map are built from the data.
    pub fn train(
        data: &[TaggedSequence],
        config: &TrainConfig,
    ) -> Result<(CrfModel, TrainReport), CrfError> {
        train::train_model(data, config)
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.features
    }

    pub fn params(&self) -> &CrfParams {
        &self.params
    }

    /// Emission scores for one sentence, over this model's label set.
    /// Features unseen in training contribute nothing.
    pub fn emissions_for(
        &self,
        tokens: &[String],
        flags: &[ContextFlags],
    ) -> Result<Vec<Vec<f64>>, CrfError> {
        if tokens.len() != flags.len() {
            return Err(CrfError::LengthMismatch {
                tokens: tokens.len(),
                other: flags.len(),
                what: "flags",
            });
        }
        let feats = features::lookup_sentence(&self.features, tokens, flags);
        Ok(inference::emissions(
            &feats,
            &self.params.w,
            self.labels.len(),
        ))
    }

    /// BIO-masked Viterbi tags for one sentence.
    pub fn predict(
        &self,
        tokens: &[String],
        flags: &[ContextFlags],
    ) -> Result<Vec<String>, CrfError> {
        let e = self.emissions_for(tokens, flags)?;
        let mask = self.labels.transition_mask();
        let (path, _) = inference::viterbi(&e, &self.params.b, &self.params.start, Some(&mask));
        Ok(path
            .into_iter()
            .map(|y| self.labels.label(y).to_string())
            .collect())
    }

    /// [`predict`](Self::predict) over a batch, in input order. Runs on the
    /// rayon pool when the `parallel` feature is on.
    pub fn predict_batch(&self, inputs: &[AugmentedInput]) -> Result<Vec<Vec<String>>, CrfError> {
        crate::exec::try_map_vec(inputs, |input| self.predict(&input.tokens, &input.flags))
    }

    /// Serializes the model as one line of JSON. Parsing those bytes with
    /// [`from_json_bytes`](Self::from_json_bytes) and serializing again
    /// reproduces them exactly.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            labels: self.labels.labels().to_vec(),
            features: self.features.names().to_vec(),
            w: self.params.w.clone(),
            b: self.params.b.clone(),
            start: self.params.start.clone(),
        };
        let mut bytes = serde_json::to_vec(&file).expect("model serialization cannot fail");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, CrfError> {
        let file: ModelFile =
            serde_json::from_slice(bytes).map_err(|e| CrfError::Corrupt(e.to_string()))?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(CrfError::VersionMismatch {
                found: file.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let labels = LabelSet::from_labels(file.labels)?;
        let features = FeatureMap::from_names(file.features)?;
        let params = CrfParams {
            w: file.w,
            b: file.b,
            start: file.start,
        };
        Self::new(labels, features, params)
    }

    pub fn save(&self, path: &Path) -> Result<(), CrfError> {
        fs::write(path, self.to_json_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CrfError> {
        Self::from_json_bytes(&fs::read(path)?)
    }
}

fn check_dims(
    labels: &LabelSet,
    features: &FeatureMap,
    params: &CrfParams,
) -> Result<(), CrfError> {
    let t = labels.len();
    let f = features.len();
    let bad = |what: String| Err(CrfError::Corrupt(what));
    if params.w.len() != f {
        return bad(format!("{} emission rows for {f} features", params.w.len()));
    }
    if params.w.iter().any(|row| row.len() != t) {
        return bad(format!("emission row width differs from {t} labels"));
    }
    if params.b.len() != t || params.b.iter().any(|row| row.len() != t) {
        return bad(format!("transition matrix is not {t}x{t}"));
    }
    if params.start.len() != t {
        return bad(format!(
            "{} start weights for {t} labels",
            params.start.len()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(n: usize) -> Vec<ContextFlags> {
        vec![ContextFlags::default(); n]
    }

    #[test]
    fn label_set_is_canonical() {
        let set = LabelSet::from_tags(["I-PER", "O", "B-LOC", "I-PER"]).unwrap();
        assert_eq!(set.labels(), ["O", "B-LOC", "B-PER", "I-PER"]);
        assert_eq!(set.index_of("O"), Some(0));
        assert_eq!(set.index_of("I-PER"), Some(3));
        assert_eq!(set.index_of("B-ORG"), None);
    }

    #[test]
    fn label_set_always_contains_o() {
        let set = LabelSet::from_tags(["B-X"]).unwrap();
        assert_eq!(set.labels(), ["O", "B-X"]);
    }

    #[test]
    fn label_set_rejects_malformed_and_inconsistent() {
        assert!(LabelSet::from_tags(["B"]).is_err());
        assert!(LabelSet::from_labels(vec!["O".into(), "I-PER".into()]).is_err());
        assert!(LabelSet::from_labels(vec!["O".into(), "O".into()]).is_err());
        assert!(LabelSet::from_labels(vec![]).is_err());
    }

    #[test]
    fn transition_mask_pins_continuations_to_their_entity() {
        let set = LabelSet::from_tags(["B-LOC", "I-LOC", "B-PER", "I-PER"]).unwrap();
        let mask = set.transition_mask();
        let idx = |l: &str| set.index_of(l).unwrap();

        assert!(mask.start_allowed[idx("O")]);
        assert!(mask.start_allowed[idx("B-PER")]);
        assert!(!mask.start_allowed[idx("I-PER")]);

        assert!(mask.allowed[idx("B-PER")][idx("I-PER")]);
        assert!(mask.allowed[idx("I-PER")][idx("I-PER")]);
        assert!(!mask.allowed[idx("O")][idx("I-PER")]);
        assert!(!mask.allowed[idx("B-LOC")][idx("I-PER")]);
        assert!(!mask.allowed[idx("I-LOC")][idx("I-PER")]);

        assert!(mask.allowed[idx("I-PER")][idx("B-LOC")]);
        assert!(mask.allowed[idx("B-PER")][idx("O")]);
    }

    #[test]
    fn tagged_sequence_validates_lengths_and_tags() {
        let toks = vec!["a".to_string(), "b".to_string()];
        assert!(TaggedSequence::new(toks.clone(), vec!["O".into(); 2], flags(2)).is_ok());
        assert!(matches!(
            TaggedSequence::new(toks.clone(), vec!["O".into()], flags(2)),
            Err(CrfError::LengthMismatch { what: "tags", .. })
        ));
        assert!(matches!(
            TaggedSequence::new(toks.clone(), vec!["O".into(); 2], flags(1)),
            Err(CrfError::LengthMismatch { what: "flags", .. })
        ));
        assert!(TaggedSequence::new(toks, vec!["O".into(), "Q".into()], flags(2)).is_err());
    }

    #[test]
    fn params_norm_and_update() {
        let mut p = CrfParams::zeros(2, 2);
        p.w[0][1] = 3.0;
        p.b[1][0] = 4.0;
        p.start[0] = 0.0;
        assert_eq!(p.norm_sq(), 25.0);
        let mut q = CrfParams::zeros(2, 2);
        q.add_scaled(&p, -0.5);
        assert_eq!(q.w[0][1], -1.5);
        assert_eq!(q.b[1][0], -2.0);
    }

    #[test]
    fn model_new_rejects_dimension_mismatches() {
        let labels = LabelSet::from_tags(["B-X"]).unwrap();
        let mut map = FeatureMap::new();
        map.intern("w=a");
        assert!(CrfModel::new(labels.clone(), map.clone(), CrfParams::zeros(1, 2)).is_ok());
        assert!(CrfModel::new(labels.clone(), map.clone(), CrfParams::zeros(2, 2)).is_err());
        assert!(CrfModel::new(labels.clone(), map.clone(), CrfParams::zeros(1, 3)).is_err());
        let mut bad = CrfParams::zeros(1, 2);
        bad.start.pop();
        assert!(CrfModel::new(labels, map, bad).is_err());
    }

    #[test]
    fn model_json_round_trip_is_byte_identical() {
        let labels = LabelSet::from_tags(["B-X", "I-X"]).unwrap();
        let mut map = FeatureMap::new();
        map.intern("w=a");
        map.intern("lw=a");
        let mut params = CrfParams::zeros(2, 3);
        params.w[0][1] = 0.1 + 0.2;
        params.b[2][0] = -1.0 / 3.0;
        params.start[2] = 1e-300;
        let model = CrfModel::new(labels, map, params).unwrap();

        let bytes = model.to_json_bytes();
        let reloaded = CrfModel::from_json_bytes(&bytes).unwrap();
        assert_eq!(reloaded, model);
        assert_eq!(reloaded.to_json_bytes(), bytes);
    }

    #[test]
    fn model_file_version_is_checked() {
        let labels = LabelSet::from_tags(["B-X"]).unwrap();
        let model = CrfModel::new(labels, FeatureMap::new(), CrfParams::zeros(0, 2)).unwrap();
        let text = String::from_utf8(model.to_json_bytes()).unwrap();
        let bumped = text.replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            CrfModel::from_json_bytes(bumped.as_bytes()),
            Err(CrfError::VersionMismatch {
                found: 9,
                expected: 1
            })
        ));
        assert!(CrfModel::from_json_bytes(b"{not json").is_err());
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let labels = LabelSet::from_tags(["B-X"]).unwrap();
        let mut map = FeatureMap::new();
        map.intern("w=a");
        let mut params = CrfParams::zeros(1, 2);
        params.w[0][0] = 2.5;
        let model = CrfModel::new(labels, map, params).unwrap();
        model.save(&path).unwrap();
        assert_eq!(CrfModel::load(&path).unwrap(), model);
    }
}

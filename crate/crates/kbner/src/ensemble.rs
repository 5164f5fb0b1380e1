//! Combining predictions from several models.
//!
//! Two strategies: span-level majority voting with overlap resolution, and
//! averaging the raw CRF scores before a single decode. Voting works on any
//! span lists; score averaging needs models whose label sets agree exactly,
//! while their feature maps may differ (each model scores the sentence
//! through its own features).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{spans_from_bio, CorpusError, EntitySpan};
use crate::crf::{inference, CrfError, CrfModel};
use crate::retrieval::ContextFlags;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid vote configuration: {0}")]
    InvalidVoteConfig(String),
    #[error("ensemble models have different label sets")]
    LabelSetMismatch,
    #[error("cannot ensemble zero models")]
    EmptyEnsemble,
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Majority-vote settings: a span needs strictly more than `threshold * m`
/// votes to be considered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteConfig {
    pub threshold: f64,
    pub m: usize,
}

impl VoteConfig {
    pub fn new(threshold: f64, m: usize) -> Result<Self, EnsembleError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(EnsembleError::InvalidVoteConfig(format!(
                "threshold {threshold} is outside (0, 1)"
            )));
        }
        if m == 0 {
            return Err(EnsembleError::InvalidVoteConfig("zero models".into()));
        }
        Ok(Self { threshold, m })
    }
}

/// Votes per distinct `(start, end, label)` span across the prediction lists.
pub fn count_votes(predictions: &[Vec<EntitySpan>]) -> BTreeMap<EntitySpan, usize> {
    let mut votes = BTreeMap::new();
    for spans in predictions {
        for span in spans {
            *votes.entry(span.clone()).or_insert(0) += 1;
        }
    }
    votes
}

/// Selects spans by majority vote.
///
/// Candidates with strictly more than `threshold * m` votes are visited in
/// order: votes descending, then span length descending, then start
/// ascending, then label lexicographic. A candidate overlapping an already
/// selected span is skipped. The result is sorted by position.
pub fn majority_vote(predictions: &[Vec<EntitySpan>], config: &VoteConfig) -> Vec<EntitySpan> {
    debug_assert_eq!(config.m, predictions.len());
    let cut = config.threshold * config.m as f64;

    let mut candidates: Vec<(EntitySpan, usize)> = count_votes(predictions)
        .into_iter()
        .filter(|(_, votes)| *votes as f64 > cut)
        .collect();
    candidates.sort_by(|(a, va), (b, vb)| {
        vb.cmp(va)
            .then_with(|| (b.end - b.start).cmp(&(a.end - a.start)))
            .then_with(|| a.start.cmp(&b.start))
            .then_with(|| a.label.cmp(&b.label))
    });

    let mut selected: Vec<EntitySpan> = Vec::new();
    for (span, _) in candidates {
        if selected.iter().all(|s| !s.overlaps(&span)) {
            selected.push(span);
        }
    }
    selected.sort();
    selected
}

/// Decodes one sentence from the elementwise average of the models' emission,
/// transition, and start scores, then extracts spans. All models must share
/// one label set; feature extraction runs per model.
pub fn crf_score_average(
    models: &[&CrfModel],
    tokens: &[String],
    flags: &[ContextFlags],
) -> Result<Vec<EntitySpan>, EnsembleError> {
    let first = *models.first().ok_or(EnsembleError::EmptyEnsemble)?;
    if models.iter().any(|m| m.labels() != first.labels()) {
        return Err(EnsembleError::LabelSetMismatch);
    }
    let t = first.labels().len();
    let m = models.len() as f64;

    let mut e = vec![vec![0.0; t]; tokens.len()];
    let mut b = vec![vec![0.0; t]; t];
    let mut start = vec![0.0; t];
    for model in models {
        let own = model.emissions_for(tokens, flags)?;
        for (row, own_row) in e.iter_mut().zip(&own) {
            for (acc, v) in row.iter_mut().zip(own_row) {
                *acc += v;
            }
        }
        let params = model.params();
        for (row, own_row) in b.iter_mut().zip(&params.b) {
            for (acc, v) in row.iter_mut().zip(own_row) {
                *acc += v;
            }
        }
        for (acc, v) in start.iter_mut().zip(&params.start) {
            *acc += v;
        }
    }
    for row in e.iter_mut().chain(b.iter_mut()) {
        for v in row.iter_mut() {
            *v /= m;
        }
    }
    for v in start.iter_mut() {
        *v /= m;
    }

    let mask = first.labels().transition_mask();
    let (path, _) = inference::viterbi(&e, &b, &start, Some(&mask));
    let tags: Vec<String> = path
        .into_iter()
        .map(|y| first.labels().label(y).to_string())
        .collect();
    Ok(spans_from_bio(&tags)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::{CrfParams, FeatureMap, LabelSet};
    use proptest::prelude::*;

    fn span(start: usize, end: usize, label: &str) -> EntitySpan {
        EntitySpan::new(start, end, label)
    }

    fn config(threshold: f64, m: usize) -> VoteConfig {
        VoteConfig::new(threshold, m).unwrap()
    }

    #[test]
    fn vote_config_validates_its_range() {
        assert!(VoteConfig::new(0.5, 3).is_ok());
        assert!(VoteConfig::new(0.0, 3).is_err());
        assert!(VoteConfig::new(1.0, 3).is_err());
        assert!(VoteConfig::new(0.5, 0).is_err());
    }

    #[test]
    fn two_of_three_votes_beat_a_half_threshold() {
        let s = span(0, 1, "PER");
        let preds = vec![vec![s.clone()], vec![s.clone()], vec![]];
        assert_eq!(majority_vote(&preds, &config(0.5, 3)), vec![s]);
    }

    #[test]
    fn exactly_half_the_votes_is_not_a_majority() {
        let s = span(0, 1, "PER");
        let preds = vec![vec![s.clone()], vec![s], vec![], vec![]];
        assert!(majority_vote(&preds, &config(0.5, 4)).is_empty());
    }

    #[test]
    fn more_votes_beat_a_longer_overlapping_span() {
        let a = span(0, 2, "PER");
        let b = span(1, 5, "LOC");
        let preds = vec![
            vec![a.clone(), b.clone()],
            vec![a.clone(), b],
            vec![a.clone()],
        ];
        assert_eq!(majority_vote(&preds, &config(0.5, 3)), vec![a]);
    }

    #[test]
    fn equal_votes_prefer_the_longer_span() {
        let a = span(0, 2, "PER");
        let b = span(1, 4, "LOC");
        let preds = vec![vec![a.clone(), b.clone()], vec![a], vec![b.clone()]];
        assert_eq!(majority_vote(&preds, &config(0.5, 3)), vec![b]);
    }

    #[test]
    fn full_tie_falls_back_to_start_then_label() {
        let early = span(0, 1, "PER");
        let late = span(2, 3, "PER");
        let preds = vec![vec![early.clone(), late.clone()]];
        assert_eq!(
            majority_vote(&preds, &config(0.5, 1)),
            vec![early.clone(), late]
        );

        let loc = span(0, 1, "LOC");
        let per = span(0, 1, "PER");
        let preds = vec![vec![loc.clone()], vec![per]];
        // One vote each, same length and start: LOC sorts first and PER then
        // overlaps it.
        assert_eq!(majority_vote(&preds, &config(0.3, 2)), vec![loc]);
    }

    #[test]
    fn single_model_voting_is_identity() {
        let spans = vec![span(0, 1, "PER"), span(3, 5, "LOC")];
        let preds = vec![spans.clone()];
        assert_eq!(majority_vote(&preds, &config(0.5, 1)), spans);
    }

    #[test]
    fn unanimous_spans_survive_an_odd_majority() {
        let s = span(2, 4, "ORG");
        let preds = vec![vec![s.clone()]; 5];
        assert_eq!(majority_vote(&preds, &config(0.5, 5)), vec![s]);
    }

    fn arb_span() -> impl Strategy<Value = EntitySpan> {
        (0usize..8, 1usize..4, prop_oneof!["PER", "LOC", "ORG"])
            .prop_map(|(start, len, label)| EntitySpan::new(start, start + len, label))
    }

    fn arb_predictions() -> impl Strategy<Value = Vec<Vec<EntitySpan>>> {
        proptest::collection::vec(proptest::collection::vec(arb_span(), 0..5), 1..6)
    }

    proptest! {
        #[test]
        fn output_spans_never_overlap(preds in arb_predictions()) {
            let out = majority_vote(&preds, &config(0.3, preds.len()));
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    prop_assert!(!out[i].overlaps(&out[j]));
                }
            }
        }

        #[test]
        fn voting_ignores_model_order(preds in arb_predictions(), rot in 0usize..5) {
            let cfg = config(0.4, preds.len());
            let baseline = majority_vote(&preds, &cfg);
            let mut rotated = preds.clone();
            rotated.rotate_left(rot % preds.len().max(1));
            prop_assert_eq!(majority_vote(&rotated, &cfg), baseline);
        }

        #[test]
        fn raising_the_threshold_never_adds_spans(
            preds in arb_predictions(),
            lo in 0.05f64..0.9,
            bump in 0.01f64..0.09,
        ) {
            let low = majority_vote(&preds, &config(lo, preds.len()));
            let high = majority_vote(&preds, &config(lo + bump, preds.len()));
            prop_assert!(high.iter().all(|s| low.contains(s)));
            prop_assert!(high.len() <= low.len());
        }
    }

    /// One-feature model over the `O`/`B-X` label pair whose single token
    /// scores `(o, bx)`.
    fn scored_model(o: f64, bx: f64) -> CrfModel {
        let labels = LabelSet::from_tags(["B-X"]).unwrap();
        let mut map = FeatureMap::new();
        map.intern("w=x");
        let mut params = CrfParams::zeros(1, 2);
        params.w[0] = vec![o, bx];
        CrfModel::new(labels, map, params).unwrap()
    }

    fn x_token() -> (Vec<String>, Vec<ContextFlags>) {
        (vec!["x".to_string()], vec![ContextFlags::default()])
    }

    #[test]
    fn averaging_one_model_matches_its_own_decode() {
        let model = scored_model(0.0, 2.0);
        let (tokens, flags) = x_token();
        let avg = crf_score_average(&[&model], &tokens, &flags).unwrap();
        let own = spans_from_bio(&model.predict(&tokens, &flags).unwrap()).unwrap();
        assert_eq!(avg, own);
        assert_eq!(avg, vec![span(0, 1, "X")]);
    }

    #[test]
    fn averaging_identical_models_changes_nothing() {
        let a = scored_model(1.0, 3.0);
        let b = scored_model(1.0, 3.0);
        let (tokens, flags) = x_token();
        let avg = crf_score_average(&[&a, &b], &tokens, &flags).unwrap();
        assert_eq!(avg, vec![span(0, 1, "X")]);
    }

    #[test]
    fn averaging_can_overrule_one_model() {
        // Scores (3,0) and (0,4) average to (1.5,2.0): the first model alone
        // decodes O, the average decodes the entity.
        let a = scored_model(3.0, 0.0);
        let b = scored_model(0.0, 4.0);
        let (tokens, flags) = x_token();
        assert_eq!(a.predict(&tokens, &flags).unwrap(), vec!["O"]);
        let avg = crf_score_average(&[&a, &b], &tokens, &flags).unwrap();
        assert_eq!(avg, vec![span(0, 1, "X")]);
    }

    #[test]
    fn averaging_can_overrule_every_model() {
        let labels = LabelSet::from_tags(["B-X", "B-Y"]).unwrap();
        let mk = |scores: [f64; 3]| {
            let mut map = FeatureMap::new();
            map.intern("w=x");
            let mut params = CrfParams::zeros(1, 3);
            params.w[0] = scores.to_vec();
            CrfModel::new(labels.clone(), map, params).unwrap()
        };
        // Labels are [O, B-X, B-Y]; each model's own argmax differs, the
        // average (1.5, 2.0, 3.2) puts B-Y on top.
        let a = mk([3.0, 0.0, 2.9]);
        let b = mk([0.0, 4.0, 3.5]);
        let (tokens, flags) = x_token();
        assert_eq!(a.predict(&tokens, &flags).unwrap(), vec!["O"]);
        assert_eq!(b.predict(&tokens, &flags).unwrap(), vec!["B-X"]);
        let avg = crf_score_average(&[&a, &b], &tokens, &flags).unwrap();
        assert_eq!(avg, vec![span(0, 1, "Y")]);
    }

    #[test]
    fn averaging_requires_matching_label_sets() {
        let a = scored_model(1.0, 1.0);
        let labels = LabelSet::from_tags(["B-Y"]).unwrap();
        let b = CrfModel::new(labels, FeatureMap::new(), CrfParams::zeros(0, 2)).unwrap();
        let (tokens, flags) = x_token();
        assert!(matches!(
            crf_score_average(&[&a, &b], &tokens, &flags),
            Err(EnsembleError::LabelSetMismatch)
        ));
        assert!(matches!(
            crf_score_average(&[], &tokens, &flags),
            Err(EnsembleError::EmptyEnsemble)
        ));
    }

    #[test]
    fn averaging_tolerates_distinct_feature_maps() {
        let a = scored_model(0.0, 1.0);
        let labels = LabelSet::from_tags(["B-X"]).unwrap();
        let mut other_map = FeatureMap::new();
        other_map.intern("lw=x");
        other_map.intern("w=x");
        let mut params = CrfParams::zeros(2, 2);
        params.w[0] = vec![0.0, 1.0];
        params.w[1] = vec![0.0, 1.0];
        let b = CrfModel::new(labels, other_map, params).unwrap();
        let (tokens, flags) = x_token();
        let avg = crf_score_average(&[&a, &b], &tokens, &flags).unwrap();
        assert_eq!(avg, vec![span(0, 1, "X")]);
    }
}

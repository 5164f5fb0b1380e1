//! Scoring: entity-level F1 (macro and micro), boundary-only mention F1, and
//! the character-level IoU retrieval relevance metric with histograms.
//!
//! Gold and predicted spans are aligned by sentence id, so sentence order
//! never affects a report. A prediction counts as a true positive only on an
//! exact `(start, end, label)` match; mention scoring drops the label and
//! matches boundaries alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EntitySpan;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("sentence id `{0}` is missing from one side")]
    SentenceIdMismatch(String),
    #[error("duplicate sentence id `{0}`")]
    DuplicateSentenceId(String),
}

/// Spans of one sentence, keyed by the sentence's id. Also the on-disk
/// prediction interchange row (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpans {
    pub sentence_id: String,
    pub spans: Vec<EntitySpan>,
}

/// Per-label tallies with the derived precision/recall/F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub tp: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LabelMetrics {
    fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

/// The full scoring report of one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Every label seen in gold or predictions.
    pub per_label: BTreeMap<String, LabelMetrics>,
    /// Unweighted mean F1 over labels that occur in gold.
    pub macro_f1: f64,
    /// F1 of the pooled counts across labels.
    pub micro_f1: f64,
    /// F1 on `(start, end)` alone, labels ignored.
    pub mention_f1: f64,
}

/// IoU histogram over `[0, 1]` with uniform bins; a value of exactly 1 lands
/// in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub sample_count: usize,
}

struct PairedSpans<'a> {
    gold: &'a [EntitySpan],
    pred: &'a [EntitySpan],
}

fn pair_by_id<'a>(
    gold: &'a [SentenceSpans],
    pred: &'a [SentenceSpans],
) -> Result<Vec<PairedSpans<'a>>, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut by_id: BTreeMap<&str, &[EntitySpan]> = BTreeMap::new();
    for sentence in pred {
        if by_id
            .insert(&sentence.sentence_id, &sentence.spans)
            .is_some()
        {
            return Err(EvalError::DuplicateSentenceId(sentence.sentence_id.clone()));
        }
    }
    let mut seen: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
    gold.iter()
        .map(|sentence| {
            if !seen.insert(&sentence.sentence_id) {
                return Err(EvalError::DuplicateSentenceId(sentence.sentence_id.clone()));
            }
            let pred_spans = by_id
                .get(sentence.sentence_id.as_str())
                .ok_or_else(|| EvalError::SentenceIdMismatch(sentence.sentence_id.clone()))?;
            Ok(PairedSpans {
                gold: &sentence.spans,
                pred: pred_spans,
            })
        })
        .collect()
}

/// Multiset true positives under a span projection (full triple for entity
/// scoring, boundaries for mention scoring).
fn matched<K: Ord>(
    gold: &[EntitySpan],
    pred: &[EntitySpan],
    key: impl Fn(&EntitySpan) -> K,
) -> usize {
    let mut gold_counts: BTreeMap<K, usize> = BTreeMap::new();
    for span in gold {
        *gold_counts.entry(key(span)).or_insert(0) += 1;
    }
    let mut tp = 0;
    for span in pred {
        if let Some(count) = gold_counts.get_mut(&key(span)) {
            if *count > 0 {
                *count -= 1;
                tp += 1;
            }
        }
    }
    tp
}

/// Scores predictions against gold, aligned by sentence id.
pub fn entity_f1(
    gold: &[SentenceSpans],
    pred: &[SentenceSpans],
) -> Result<MetricsReport, EvalError> {
    let pairs = pair_by_id(gold, pred)?;

    let mut tally: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut mention_tp = 0;
    let mut mention_pred = 0;
    let mut mention_gold = 0;
    for pair in &pairs {
        for span in pair.gold {
            tally.entry(span.label.clone()).or_insert((0, 0, 0)).2 += 1;
        }
        for span in pair.pred {
            tally.entry(span.label.clone()).or_insert((0, 0, 0)).1 += 1;
        }
        let mut per_sentence: BTreeMap<&str, (Vec<&EntitySpan>, Vec<&EntitySpan>)> =
            BTreeMap::new();
        for span in pair.gold {
            per_sentence.entry(&span.label).or_default().0.push(span);
        }
        for span in pair.pred {
            per_sentence.entry(&span.label).or_default().1.push(span);
        }
        for (label, (g, p)) in per_sentence {
            let g: Vec<EntitySpan> = g.into_iter().cloned().collect();
            let p: Vec<EntitySpan> = p.into_iter().cloned().collect();
            tally.get_mut(label).unwrap().0 += matched(&g, &p, |s| (s.start, s.end));
        }

        mention_tp += matched(pair.gold, pair.pred, |s| (s.start, s.end));
        mention_pred += pair.pred.len();
        mention_gold += pair.gold.len();
    }

    let per_label: BTreeMap<String, LabelMetrics> = tally
        .into_iter()
        .map(|(label, (tp, predicted, gold))| {
            (label, LabelMetrics::from_counts(tp, predicted, gold))
        })
        .collect();

    let gold_labels: Vec<&LabelMetrics> = per_label
        .values()
        .filter(|metrics| metrics.gold > 0)
        .collect();
    let macro_f1 = if gold_labels.is_empty() {
        0.0
    } else {
        gold_labels.iter().map(|metrics| metrics.f1).sum::<f64>() / gold_labels.len() as f64
    };

    let pooled_tp: usize = per_label.values().map(|metrics| metrics.tp).sum();
    let pooled_pred: usize = per_label.values().map(|metrics| metrics.predicted).sum();
    let pooled_gold: usize = per_label.values().map(|metrics| metrics.gold).sum();
    let micro = LabelMetrics::from_counts(pooled_tp, pooled_pred, pooled_gold);
    let mention = LabelMetrics::from_counts(mention_tp, mention_pred, mention_gold);

    Ok(MetricsReport {
        per_label,
        macro_f1,
        micro_f1: micro.f1,
        mention_f1: mention.f1,
    })
}

/// Boundary-only F1: spans match on `(start, end)` regardless of label.
pub fn mention_f1(gold: &[SentenceSpans], pred: &[SentenceSpans]) -> Result<f64, EvalError> {
    let pairs = pair_by_id(gold, pred)?;
    let mut tp = 0;
    let mut predicted = 0;
    let mut gold_total = 0;
    for pair in pairs {
        tp += matched(pair.gold, pair.pred, |s| (s.start, s.end));
        predicted += pair.pred.len();
        gold_total += pair.gold.len();
    }
    Ok(LabelMetrics::from_counts(tp, predicted, gold_total).f1)
}

/// Character-multiset intersection over union. Repeated characters count
/// separately, whitespace counts, and two empty strings score 0.
pub fn char_iou(a: &str, b: &str) -> f64 {
    let mut counts: BTreeMap<char, (usize, usize)> = BTreeMap::new();
    for c in a.chars() {
        counts.entry(c).or_default().0 += 1;
    }
    for c in b.chars() {
        counts.entry(c).or_default().1 += 1;
    }
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (x, y) in counts.values() {
        intersection += x.min(y);
        union += x.max(y);
    }
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Histograms the IoU of each (query, top result) pair into `bins` uniform
/// bins over `[0, 1]`. `bins` must be at least 1.
pub fn iou_report(pairs: &[(String, String)], bins: usize) -> IouHistogram {
    assert!(bins >= 1, "histogram needs at least one bin");
    let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for (query, result) in pairs {
        let value = char_iou(query, result);
        let bin = ((value * bins as f64).floor() as usize).min(bins - 1);
        counts[bin] += 1;
    }
    IouHistogram {
        bin_edges,
        counts,
        sample_count: pairs.len(),
    }
}

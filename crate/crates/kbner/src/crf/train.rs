//! Negative log-likelihood, its exact gradient, and mini-batch descent.
//!
//! The batch objective is `sum(logZ - gold score) + (l2/2) * |theta|^2`, the
//! regularizer entering once per batch call. Per-sequence marginals come from
//! one forward/backward pass each; with the `parallel` feature those passes
//! fan out across the batch, while accumulation stays sequential in input
//! order so both builds produce bit-identical gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{self, FeatureMap};
use super::inference::{backward, forward, logsumexp, sequence_score};
use super::{CrfError, CrfModel, CrfParams, LabelSet, TaggedSequence, TrainConfig, TrainReport};

/// A sequence ready for the numeric core: feature indices and label indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub features: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
}

struct SequenceStats {
    loss: f64,
    /// `token[i][y] = P(y_i = y | x)`.
    token: Vec<Vec<f64>>,
    /// `pair[i-1][yp][y] = P(y_(i-1) = yp, y_i = y | x)`.
    pair: Vec<Vec<Vec<f64>>>,
}

fn sequence_stats(params: &CrfParams, seq: &EncodedSequence) -> SequenceStats {
    let t = params.n_labels();
    let e = super::inference::emissions(&seq.features, &params.w, t);
    let n = e.len();
    let alpha = forward(&e, &params.b, &params.start);
    let beta = backward(&e, &params.b);
    let log_z = logsumexp(&alpha[n - 1]);
    let loss = log_z - sequence_score(&e, &params.b, &params.start, &seq.labels);

    let token: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..t)
                .map(|y| (alpha[i][y] + beta[i][y] - log_z).exp())
                .collect()
        })
        .collect();
    let pair: Vec<Vec<Vec<f64>>> = (1..n)
        .map(|i| {
            (0..t)
                .map(|yp| {
                    (0..t)
                        .map(|y| {
                            (alpha[i - 1][yp] + params.b[yp][y] + e[i][y] + beta[i][y] - log_z)
                                .exp()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    SequenceStats { loss, token, pair }
}

/// Batch objective and its exact gradient at `params`.
pub fn nll_and_gradient(
    params: &CrfParams,
    batch: &[&EncodedSequence],
    l2: f64,
) -> (f64, CrfParams) {
    let t = params.n_labels();
    let stats = crate::exec::map_vec(batch, |seq| sequence_stats(params, seq));

    let mut loss = 0.0;
    let mut grad = CrfParams::zeros(params.n_features(), t);
    for (seq, stat) in batch.iter().zip(&stats) {
        loss += stat.loss;
        let gold = &seq.labels;
        for (i, ids) in seq.features.iter().enumerate() {
            for y in 0..t {
                let observed = if gold[i] == y { 1.0 } else { 0.0 };
                let d = stat.token[i][y] - observed;
                if d != 0.0 {
                    for &f in ids {
                        grad.w[f as usize][y] += d;
                    }
                }
            }
        }
        for y in 0..t {
            let observed = if gold[0] == y { 1.0 } else { 0.0 };
            grad.start[y] += stat.token[0][y] - observed;
        }
        for i in 1..gold.len() {
            for yp in 0..t {
                for y in 0..t {
                    let observed = if gold[i - 1] == yp && gold[i] == y {
                        1.0
                    } else {
                        0.0
                    };
                    grad.b[yp][y] += stat.pair[i - 1][yp][y] - observed;
                }
            }
        }
    }

    loss += 0.5 * l2 * params.norm_sq();
    grad.add_scaled(params, l2);
    (loss, grad)
}

pub(super) fn train_model(
    data: &[TaggedSequence],
    config: &TrainConfig,
) -> Result<(CrfModel, TrainReport), CrfError> {
    if data.is_empty() {
        return Err(CrfError::EmptyTrainingSet);
    }
    if config.batch_size == 0 {
        return Err(CrfError::InvalidConfig(
            "batch size must be at least 1".into(),
        ));
    }
    if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() {
        return Err(CrfError::InvalidConfig(
            "learning rate must be positive".into(),
        ));
    }
    if config.l2 < 0.0 || !config.l2.is_finite() {
        return Err(CrfError::InvalidConfig(
            "l2 strength must be nonnegative".into(),
        ));
    }

    let labels = LabelSet::from_tags(data.iter().flat_map(|s| s.tags.iter().map(|t| t.as_str())))?;
    let mut map = FeatureMap::new();
    let mut encoded = Vec::with_capacity(data.len());
    for seq in data {
        if seq.tokens.is_empty() {
            return Err(CrfError::Corpus(crate::corpus::CorpusError::EmptySentence(
                0,
            )));
        }
        if seq.tokens.len() != seq.tags.len() {
            return Err(CrfError::LengthMismatch {
                tokens: seq.tokens.len(),
                other: seq.tags.len(),
                what: "tags",
            });
        }
        if seq.tokens.len() != seq.flags.len() {
            return Err(CrfError::LengthMismatch {
                tokens: seq.tokens.len(),
                other: seq.flags.len(),
                what: "flags",
            });
        }
        let feats = features::index_sentence(&mut map, &seq.tokens, &seq.flags);
        let gold = seq
            .tags
            .iter()
            .map(|tag| {
                labels
                    .index_of(tag)
                    .ok_or_else(|| CrfError::UnknownLabel(tag.clone()))
            })
            .collect::<Result<Vec<usize>, CrfError>>()?;
        encoded.push(EncodedSequence {
            features: feats,
            labels: gold,
        });
    }

    let mut params = CrfParams::zeros(map.len(), labels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedSequence> = chunk.iter().map(|&i| &encoded[i]).collect();
            let (loss, grad) = nll_and_gradient(&params, &batch, config.l2);
            params.add_scaled(&grad, -config.learning_rate);
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }

    let report = TrainReport {
        epoch_losses,
        n_sequences: data.len(),
        n_features: map.len(),
        n_labels: labels.len(),
    };
    let model = CrfModel::new(labels, map, params)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ContextFlags;
    use rand::Rng;

    fn seq(features: Vec<Vec<u32>>, labels: Vec<usize>) -> EncodedSequence {
        EncodedSequence { features, labels }
    }

    fn tagged(tokens: &[&str], tags: &[&str]) -> TaggedSequence {
        TaggedSequence::new(
            tokens.iter().map(|t| t.to_string()).collect(),
            tags.iter().map(|t| t.to_string()).collect(),
            vec![ContextFlags::default(); tokens.len()],
        )
        .unwrap()
    }

    #[test]
    fn zero_parameter_loss_is_length_times_log_labels() {
        let t = 3usize;
        let params = CrfParams::zeros(4, t);
        let a = seq(vec![vec![0], vec![1, 2]], vec![0, 2]);
        let b = seq(vec![vec![3]], vec![1]);
        let (loss, _) = nll_and_gradient(&params, &[&a, &b], 0.0);
        let expected = (2.0 + 1.0) * (t as f64).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn regularizer_enters_the_objective_once_per_call() {
        let mut params = CrfParams::zeros(1, 2);
        params.w[0][0] = 2.0;
        let s = seq(vec![vec![0]], vec![0]);
        let (plain, _) = nll_and_gradient(&params, &[&s], 0.0);
        let (ridged, grad) = nll_and_gradient(&params, &[&s], 0.5);
        assert!((ridged - plain - 0.5 * 0.5 * 4.0).abs() < 1e-12);
        // d/dw of the ridge term at w=2, l2=0.5 adds exactly 1.
        let (_, plain_grad) = nll_and_gradient(&params, &[&s], 0.0);
        assert!((grad.w[0][0] - plain_grad.w[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_features = 6;
        let t = 3;
        let seqs: Vec<EncodedSequence> = (0..3)
            .map(|_| {
                let n = rng.gen_range(1..=3);
                let features = (0..n)
                    .map(|_| {
                        let k = rng.gen_range(1..=3);
                        let mut ids: Vec<u32> = (0..k)
                            .map(|_| rng.gen_range(0..n_features as u32))
                            .collect();
                        ids.sort_unstable();
                        ids.dedup();
                        ids
                    })
                    .collect();
                let labels = (0..n).map(|_| rng.gen_range(0..t)).collect();
                seq(features, labels)
            })
            .collect();
        let batch: Vec<&EncodedSequence> = seqs.iter().collect();

        let mut params = CrfParams::zeros(n_features, t);
        for row in params.w.iter_mut().chain(params.b.iter_mut()) {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        for v in params.start.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }

        let l2 = 0.1;
        let (_, grad) = nll_and_gradient(&params, &batch, l2);
        let h = 1e-6;
        let check = |get: &mut dyn FnMut(&mut CrfParams) -> &mut f64, analytic: f64| {
            let mut plus = params.clone();
            *get(&mut plus) += h;
            let mut minus = params.clone();
            *get(&mut minus) -= h;
            let (lp, _) = nll_and_gradient(&plus, &batch, l2);
            let (lm, _) = nll_and_gradient(&minus, &batch, l2);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-8);
            assert!(rel < 1e-4, "fd {fd} vs analytic {analytic}");
        };
        for f in 0..n_features {
            for y in 0..t {
                check(&mut |p| &mut p.w[f][y], grad.w[f][y]);
            }
        }
        for yp in 0..t {
            for y in 0..t {
                check(&mut |p| &mut p.b[yp][y], grad.b[yp][y]);
            }
        }
        for y in 0..t {
            check(&mut |p| &mut p.start[y], grad.start[y]);
        }
    }

    #[test]
    fn training_fits_a_separable_toy_set() {
        let data = vec![
            tagged(&["paris", "is", "nice"], &["B-LOC", "O", "O"]),
            tagged(&["alice", "met", "bob"], &["B-PER", "O", "B-PER"]),
            tagged(&["alice", "visited", "paris"], &["B-PER", "O", "B-LOC"]),
            tagged(&["bob", "likes", "paris"], &["B-PER", "O", "B-LOC"]),
        ];
        let config = TrainConfig {
            epochs: 60,
            ..Default::default()
        };
        let (model, report) = CrfModel::train(&data, &config).unwrap();
        assert_eq!(report.n_sequences, 4);
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
        for example in &data {
            let pred = model.predict(&example.tokens, &example.flags).unwrap();
            assert_eq!(pred, example.tags, "on {:?}", example.tokens);
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = vec![
            tagged(&["a", "b"], &["B-X", "O"]),
            tagged(&["c"], &["O"]),
            tagged(&["a", "c"], &["B-X", "O"]),
        ];
        let config = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let (m1, _) = CrfModel::train(&data, &config).unwrap();
        let (m2, _) = CrfModel::train(&data, &config).unwrap();
        assert_eq!(m1.to_json_bytes(), m2.to_json_bytes());

        let other = TrainConfig { seed: 7, ..config };
        let (m3, _) = CrfModel::train(&data, &other).unwrap();
        assert_eq!(m1.labels(), m3.labels());
        assert_ne!(m1.to_json_bytes(), m3.to_json_bytes());
    }

    #[test]
    fn batch_size_may_exceed_the_data() {
        let data = vec![tagged(&["a"], &["O"])];
        let config = TrainConfig {
            epochs: 2,
            batch_size: 100,
            ..Default::default()
        };
        let (model, report) = CrfModel::train(&data, &config).unwrap();
        assert_eq!(report.epoch_losses.len(), 2);
        assert_eq!(
            model.predict(&data[0].tokens, &data[0].flags).unwrap(),
            vec!["O"]
        );
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(matches!(
            CrfModel::train(&[], &TrainConfig::default()),
            Err(CrfError::EmptyTrainingSet)
        ));
        let data = vec![tagged(&["a"], &["O"])];
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(matches!(
            CrfModel::train(&data, &bad),
            Err(CrfError::InvalidConfig(_))
        ));
        let bad_lr = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            CrfModel::train(&data, &bad_lr),
            Err(CrfError::InvalidConfig(_))
        ));
    }

    #[test]
    fn flag_features_can_carry_the_signal() {
        // Tokens are identical; only the context flags separate the labels.
        let on = ContextFlags {
            anchor_exact: true,
            ..Default::default()
        };
        let off = ContextFlags::default();
        let mk = |flag: ContextFlags, tag: &str| {
            TaggedSequence::new(
                vec!["x".into(), "x".into()],
                vec![tag.into(), "O".into()],
                vec![flag, off],
            )
            .unwrap()
        };
        let data = vec![mk(on, "B-ENT"), mk(off, "O"), mk(on, "B-ENT"), mk(off, "O")];
        let config = TrainConfig {
            epochs: 80,
            ..Default::default()
        };
        let (model, _) = CrfModel::train(&data, &config).unwrap();
        assert_eq!(
            model.predict(&data[0].tokens, &data[0].flags).unwrap(),
            vec!["B-ENT", "O"]
        );
        assert_eq!(
            model.predict(&data[1].tokens, &data[1].flags).unwrap(),
            vec!["O", "O"]
        );
    }
}

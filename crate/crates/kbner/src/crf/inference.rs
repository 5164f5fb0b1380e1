//! Log-space inference for linear-chain models.
//!
//! All functions work on an emission matrix `e[token][label]`, a transition
//! matrix `b[from][to]`, and start weights `start[label]`. A path's score is
//! `start[y0] + e[0][y0] + sum(b[y(i-1)][yi] + e[i][yi])`; there is no stop
//! weight. The recursions shift by the row maximum before exponentiating, so
//! they stay finite for any finite parameters.

/// `ln(sum(exp(xs)))`, stable under large magnitudes. Empty input and
/// all-negative-infinity input give negative infinity.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Emission scores: `e[i][y]` sums the weight rows of token `i`'s features.
pub fn emissions(feats: &[Vec<u32>], w: &[Vec<f64>], n_labels: usize) -> Vec<Vec<f64>> {
    feats
        .iter()
        .map(|ids| {
            let mut row = vec![0.0; n_labels];
            for &f in ids {
                for (acc, weight) in row.iter_mut().zip(&w[f as usize]) {
                    *acc += weight;
                }
            }
            row
        })
        .collect()
}

/// Unnormalized log score of one label path.
pub fn sequence_score(e: &[Vec<f64>], b: &[Vec<f64>], start: &[f64], path: &[usize]) -> f64 {
    debug_assert_eq!(e.len(), path.len());
    if path.is_empty() {
        return 0.0;
    }
    let mut score = start[path[0]] + e[0][path[0]];
    for i in 1..path.len() {
        score += b[path[i - 1]][path[i]] + e[i][path[i]];
    }
    score
}

/// Forward log messages: `alpha[i][y]` is the log-sum over all length-`i+1`
/// prefixes ending in label `y`.
pub fn forward(e: &[Vec<f64>], b: &[Vec<f64>], start: &[f64]) -> Vec<Vec<f64>> {
    let n = e.len();
    let t = start.len();
    let mut alpha = Vec::with_capacity(n);
    if n == 0 {
        return alpha;
    }
    alpha.push((0..t).map(|y| start[y] + e[0][y]).collect::<Vec<f64>>());
    for i in 1..n {
        let prev = &alpha[i - 1];
        let row: Vec<f64> = (0..t)
            .map(|y| {
                let terms: Vec<f64> = (0..t).map(|yp| prev[yp] + b[yp][y]).collect();
                logsumexp(&terms) + e[i][y]
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Backward log messages: `beta[i][y]` is the log-sum over all suffix
/// completions given label `y` at position `i`. The last row is zero.
pub fn backward(e: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = e.len();
    if n == 0 {
        return Vec::new();
    }
    let t = e[0].len();
    let mut beta = vec![vec![0.0; t]; n];
    for i in (0..n - 1).rev() {
        for yp in 0..t {
            let terms: Vec<f64> = (0..t)
                .map(|y| b[yp][y] + e[i + 1][y] + beta[i + 1][y])
                .collect();
            beta[i][yp] = logsumexp(&terms);
        }
    }
    beta
}

/// Log of the partition function: the log-sum of every path's score.
pub fn log_partition(e: &[Vec<f64>], b: &[Vec<f64>], start: &[f64]) -> f64 {
    let alpha = forward(e, b, start);
    match alpha.last() {
        Some(last) => logsumexp(last),
        None => 0.0,
    }
}

/// Which transitions the decoder may use. `allowed[from][to]` gates steps
/// inside the sequence, `start_allowed[to]` gates the first label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMask {
    pub start_allowed: Vec<bool>,
    pub allowed: Vec<Vec<bool>>,
}

/// Highest-scoring path and its score, observing `mask` when given.
///
/// Ties are broken toward the path whose label index is lower at the latest
/// position where the tied paths differ. Both maximizing scans visit labels
/// in increasing index and replace only on strictly better scores, which
/// realizes exactly that rule. If the mask admits no path at all, the score
/// comes back as negative infinity.
pub fn viterbi(
    e: &[Vec<f64>],
    b: &[Vec<f64>],
    start: &[f64],
    mask: Option<&TransitionMask>,
) -> (Vec<usize>, f64) {
    let n = e.len();
    let t = start.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }

    let start_ok = |y: usize| mask.is_none_or(|m| m.start_allowed[y]);
    let step_ok = |yp: usize, y: usize| mask.is_none_or(|m| m.allowed[yp][y]);

    let mut delta: Vec<f64> = (0..t)
        .map(|y| {
            if start_ok(y) {
                start[y] + e[0][y]
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(n);

    for emit in e.iter().skip(1) {
        let mut next = vec![f64::NEG_INFINITY; t];
        let mut bp = vec![0usize; t];
        for (y, slot) in next.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut best_prev = 0usize;
            for yp in 0..t {
                if !step_ok(yp, y) {
                    continue;
                }
                let score = delta[yp] + b[yp][y];
                if score > best {
                    best = score;
                    best_prev = yp;
                }
            }
            *slot = best + emit[y];
            bp[y] = best_prev;
        }
        back.push(bp);
        delta = next;
    }

    let mut best_last = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (y, &score) in delta.iter().enumerate() {
        if score > best_score {
            best_score = score;
            best_last = y;
        }
    }

    let mut path = vec![0usize; n];
    path[n - 1] = best_last;
    for i in (1..n).rev() {
        path[i - 1] = back[i - 1][path[i]];
    }
    (path, best_score)
}

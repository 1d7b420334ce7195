use crate::datagen::IrregularSequence;
use crate::error::{ensure, Result};
use crate::model::{hidden_states, ModelParams, SOS};
use crate::numerics::Scalar;

/// Mean of the final hidden rows of the first `truncate_at` observations.
/// Later observations never influence the result.
pub fn sequence_embedding<T: Scalar>(
    params: &ModelParams<T>,
    seq: &IrregularSequence,
    truncate_at: usize,
) -> Result<Vec<f64>> {
    ensure!(truncate_at >= 1, "truncate_at must be ≥ 1");
    ensure!(truncate_at <= seq.len(), "truncate_at {truncate_at} exceeds length {}", seq.len());
    let head = seq.prefix(truncate_at);
    head.validate(Some(params.config.vocab_size))?;
    let mut tokens = vec![SOS];
    tokens.extend_from_slice(&head.tokens);
    let mut times = vec![head.times[0]];
    times.extend_from_slice(&head.times);
    let h = hidden_states(params, &tokens, &times)?;
    let mut mean = vec![0.0; h.cols()];
    // Row 0 is the start marker; rows 1..=k are the observations.
    for r in 1..h.rows() {
        for (m, &v) in mean.iter_mut().zip(h.row(r)) {
            *m += v.as_f64();
        }
    }
    let n = truncate_at as f64;
    Ok(mean.into_iter().map(|m| m / n).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Class means of `embeddings`, classes `0..n_classes`.
pub fn fit_centroids(embeddings: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<f64>>> {
    ensure!(embeddings.len() == labels.len(), "{} embeddings for {} labels", embeddings.len(), labels.len());
    ensure!(n_classes >= 1, "need at least one class");
    let dim = embeddings.first().map_or(0, Vec::len);
    ensure!(embeddings.iter().all(|e| e.len() == dim), "embeddings differ in width");
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (e, &l) in embeddings.iter().zip(labels) {
        ensure!(l < n_classes, "label {l} out of range");
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(e) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        ensure!(n > 0, "class {c} has no examples");
    }
    Ok(sums.into_iter().zip(counts).map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect()).collect())
}

/// Nearest centroid by cosine similarity. Returns the class and its margin
/// over the runner-up (0 with a single class); ties go to the lower class.
pub fn classify_centroids(centroids: &[Vec<f64>], query: &[f64]) -> Result<(usize, f64)> {
    ensure!(!centroids.is_empty(), "no centroids");
    ensure!(centroids.iter().all(|c| c.len() == query.len()), "query width differs from centroids");
    let sims: Vec<f64> = centroids.iter().map(|c| cosine(c, query)).collect();
    let best = crate::numerics::argmax(&sims);
    let second = sims.iter().enumerate().filter(|&(i, _)| i != best).map(|(_, &s)| s).fold(f64::NEG_INFINITY, f64::max);
    let margin = if second.is_finite() { sims[best] - second } else { 0.0 };
    Ok((best, margin))
}

/// Few-shot classification: centroids from labelled examples, then
/// [`classify_centroids`].
pub fn centroid_classify(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    query: &[f64],
) -> Result<(usize, f64)> {
    classify_centroids(&fit_centroids(embeddings, labels, n_classes)?, query)
}

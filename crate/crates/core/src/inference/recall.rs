use crate::error::{ensure, Result};

/// Zero-based position of `truth` when `row` is sorted by descending
/// probability with ties going to the lower id.
pub fn rank_of(row: &[f64], truth: usize) -> usize {
    let p = row[truth];
    row.iter().enumerate().filter(|&(i, &q)| q > p || (q == p && i < truth)).count()
}

/// Fraction of targets whose true token is among the `k` most probable
/// entries of its row (ties to the lower id).
pub fn topk_recall(rows: &[Vec<f64>], truth: &[usize], k: usize) -> Result<f64> {
    ensure!(rows.len() == truth.len(), "{} rows for {} targets", rows.len(), truth.len());
    ensure!(!rows.is_empty(), "recall over zero targets is undefined");
    let mut hits = 0;
    for (row, &y) in rows.iter().zip(truth) {
        ensure!(k <= row.len(), "K = {k} exceeds vocab {}", row.len());
        ensure!(y < row.len(), "truth token {y} out of range");
        if rank_of(row, y) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows.len() as f64)
}

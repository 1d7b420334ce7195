use serde::{Deserialize, Serialize};

use super::forecast::prime;
use crate::datagen::IrregularSequence;
use crate::error::{ensure, Result};
use crate::model::ModelParams;
use crate::numerics::{softmax, Scalar};
use crate::odebridge::GapMode;

/// Probability of one code along a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrajectory {
    pub code: usize,
    pub grid: Vec<f64>,
    pub risk: Vec<f64>,
    /// `risk[i+1] − risk[i]`.
    pub growth: Vec<f64>,
}

impl RiskTrajectory {
    fn new(code: usize, grid: Vec<f64>, risk: Vec<f64>) -> Self {
        let growth = risk.windows(2).map(|w| w[1] - w[0]).collect();
        RiskTrajectory { code, grid, risk, growth }
    }
}

/// Full predictive distributions along `grid`.
///
/// A grid point at or after the first observation sees every observation at
/// or before it and is then carried forward to the point; points past the
/// last observation are extrapolations of the same kind. Points before the
/// first observation run the sequence backwards in time (time measured
/// back from the last observation) and carry that state to the point.
pub fn risk_distributions<T: Scalar>(
    params: &ModelParams<T>,
    seq: &IrregularSequence,
    grid: &[f64],
    gap_mode: GapMode,
) -> Result<Vec<Vec<f64>>> {
    ensure!(params.config.supports_time_specific(), "risk trajectories need SRA attention");
    ensure!(!seq.is_empty(), "risk trajectory needs at least one observation");
    seq.validate(Some(params.config.vocab_size))?;
    ensure!(
        grid.iter().all(|g| g.is_finite()) && grid.windows(2).all(|w| w[0] <= w[1]),
        "grid must be finite and non-decreasing"
    );
    let t1 = seq.times[0];
    let split = grid.partition_point(|&g| g < t1);
    let mut out = Vec::with_capacity(grid.len());

    if split > 0 {
        let end = *seq.times.last().expect("non-empty");
        let reversed = IrregularSequence {
            id: seq.id.clone(),
            tokens: seq.tokens.iter().rev().copied().collect(),
            times: seq.times.iter().rev().map(|t| end - t).collect(),
            labels: seq.labels,
        };
        let state = prime(params, &reversed)?;
        for &g in &grid[..split] {
            out.push(softmax(&state.query(params, end - g, gap_mode)?).into_iter().map(Scalar::as_f64).collect());
        }
    }

    let mut seen = 1;
    let mut state = prime(params, &seq.prefix(1))?;
    for &g in &grid[split..] {
        while seen < seq.len() && seq.times[seen] <= g {
            state.absorb(params, seq.tokens[seen], seq.times[seen])?;
            seen += 1;
        }
        out.push(softmax(&state.query(params, g, gap_mode)?).into_iter().map(Scalar::as_f64).collect());
    }
    Ok(out)
}

/// Risk of `code` along `grid`; see [`risk_distributions`].
pub fn risk_trajectory<T: Scalar>(
    params: &ModelParams<T>,
    seq: &IrregularSequence,
    code: usize,
    grid: &[f64],
    gap_mode: GapMode,
) -> Result<RiskTrajectory> {
    ensure!(code < params.config.vocab_size, "code {code} out of range for vocab {}", params.config.vocab_size);
    let risk = risk_distributions(params, seq, grid, gap_mode)?.into_iter().map(|row| row[code]).collect();
    Ok(RiskTrajectory::new(code, grid.to_vec(), risk))
}

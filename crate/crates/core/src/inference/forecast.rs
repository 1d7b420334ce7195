use serde::{Deserialize, Serialize};

use crate::datagen::IrregularSequence;
use crate::error::{ensure, Result};
use crate::model::{ModelParams, StreamState, SOS};
use crate::numerics::{argmax, softmax, Scalar};
use crate::odebridge::GapMode;

/// What is absorbed into the state after each forecast target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsorbMode {
    /// The true token at the target time (teacher-forced evaluation).
    Evaluation,
    /// The model's own greedy prediction.
    Rollout,
}

/// Greedy predictions with the probability row behind each.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub tokens: Vec<usize>,
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

fn probs_of<T: Scalar>(logits: &[T]) -> Vec<f64> {
    softmax(logits).into_iter().map(Scalar::as_f64).collect()
}

/// State after the start marker and every observation of `prefix`, the same
/// inputs the model sees during training.
pub fn prime<T: Scalar>(params: &ModelParams<T>, prefix: &IrregularSequence) -> Result<StreamState<T>> {
    ensure!(!prefix.is_empty(), "forecast needs a non-empty prefix");
    prefix.validate(Some(params.config.vocab_size))?;
    let mut state = StreamState::new(params);
    state.absorb(params, SOS, prefix.times[0])?;
    for (&tok, &t) in prefix.tokens.iter().zip(&prefix.times) {
        state.absorb(params, tok, t)?;
    }
    Ok(state)
}

/// Greedy next-token decoding at unit time increments. Each step absorbs
/// the previous prediction, so its cost does not grow with the history.
pub fn autoregressive_forecast<T: Scalar>(
    params: &ModelParams<T>,
    prefix: &IrregularSequence,
    horizon: usize,
) -> Result<Forecast> {
    ensure!(horizon >= 1, "horizon must be ≥ 1");
    let mut state = prime(params, prefix)?;
    autoregressive_continue(params, &mut state, horizon)
}

/// [`autoregressive_forecast`] from an already primed state.
pub fn autoregressive_continue<T: Scalar>(
    params: &ModelParams<T>,
    state: &mut StreamState<T>,
    horizon: usize,
) -> Result<Forecast> {
    ensure!(!state.is_empty(), "forecast needs a primed state");
    let mut logits = state.last_logits().expect("primed").to_vec();
    let mut t = state.last_time();
    let mut out = Forecast { tokens: Vec::new(), times: Vec::new(), probs: Vec::new() };
    for step in 0..horizon {
        t += 1.0;
        let tok = argmax(&logits);
        out.tokens.push(tok);
        out.times.push(t);
        out.probs.push(probs_of(&logits));
        if step + 1 < horizon {
            logits = state.absorb(params, tok, t)?;
        }
    }
    Ok(out)
}

/// Predictions at explicit target times. Each target is answered by carrying
/// every layer's state across the gap and querying at the target time; then
/// the truth (`Evaluation`, which needs `truth`) or the prediction
/// (`Rollout`) is absorbed at that time.
pub fn time_specific_forecast<T: Scalar>(
    params: &ModelParams<T>,
    prefix: &IrregularSequence,
    target_times: &[f64],
    gap_mode: GapMode,
    absorb: AbsorbMode,
    truth: Option<&[usize]>,
) -> Result<Forecast> {
    let mut state = prime(params, prefix)?;
    time_specific_continue(params, &mut state, target_times, gap_mode, absorb, truth)
}

/// [`time_specific_forecast`] from an already primed state.
pub fn time_specific_continue<T: Scalar>(
    params: &ModelParams<T>,
    state: &mut StreamState<T>,
    target_times: &[f64],
    gap_mode: GapMode,
    absorb: AbsorbMode,
    truth: Option<&[usize]>,
) -> Result<Forecast> {
    ensure!(params.config.supports_time_specific(), "time-specific inference needs SRA attention");
    ensure!(!state.is_empty(), "forecast needs a primed state");
    ensure!(
        target_times.iter().all(|t| t.is_finite()) && target_times.windows(2).all(|w| w[0] <= w[1]),
        "target times must be finite and non-decreasing"
    );
    if let Some(&first) = target_times.first() {
        ensure!(first >= state.last_time(), "target {first} precedes the prefix end {}", state.last_time());
    }
    if absorb == AbsorbMode::Evaluation {
        let truth = truth.ok_or_else(|| crate::Error::Contract("evaluation mode needs truth tokens".into()))?;
        ensure!(truth.len() == target_times.len(), "{} truth tokens for {} targets", truth.len(), target_times.len());
    }
    let mut out = Forecast { tokens: Vec::new(), times: target_times.to_vec(), probs: Vec::new() };
    for (i, &t) in target_times.iter().enumerate() {
        let logits = state.query(params, t, gap_mode)?;
        let tok = argmax(&logits);
        out.tokens.push(tok);
        out.probs.push(probs_of(&logits));
        if i + 1 < target_times.len() {
            let next = match absorb {
                AbsorbMode::Evaluation => truth.expect("checked")[i],
                AbsorbMode::Rollout => tok,
            };
            state.absorb(params, next, t)?;
        }
    }
    Ok(out)
}

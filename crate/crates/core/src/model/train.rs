use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::SOS;
use super::forward::{forward_tape, ModelVars};
use super::params::ModelParams;
use crate::datagen::IrregularSequence;
use crate::error::{ensure, Error, Result};
use crate::numerics::{log_sum_exp, Matrix, Scalar, Tape};
use crate::sra::SraForm;

/// Inputs and shifted targets of one training sequence.
///
/// Inputs are `[SOS, x_1, …, x_{N−1}]` at times `[t_1, t_1, …, t_{N−1}]`;
/// targets are `[x_1, …, x_N]` at `[t_1, …, t_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub times: Vec<f64>,
    pub targets: Vec<usize>,
    pub target_times: Vec<f64>,
}

impl Example {
    pub fn from_sequence(seq: &IrregularSequence, max_len: Option<usize>) -> Result<Self> {
        seq.validate(None)?;
        ensure!(!seq.is_empty(), "sequence {} is empty", seq.id);
        let n = max_len.map_or(seq.len(), |m| m.min(seq.len()));
        ensure!(n > 0, "max_len must be positive");
        let mut tokens = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        tokens.push(SOS);
        times.push(seq.times[0]);
        tokens.extend_from_slice(&seq.tokens[..n - 1]);
        times.extend_from_slice(&seq.times[..n - 1]);
        Ok(Example { tokens, times, targets: seq.tokens[..n].to_vec(), target_times: seq.times[..n].to_vec() })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Mean softmax cross-entropy over all rows.
pub fn nll_loss<T: Scalar>(logits: &Matrix<T>, targets: &[usize]) -> Result<T> {
    masked_nll_loss(logits, targets, None)
}

/// Mean cross-entropy over rows whose target is not `pad`.
pub fn masked_nll_loss<T: Scalar>(logits: &Matrix<T>, targets: &[usize], pad: Option<usize>) -> Result<T> {
    ensure!(logits.rows() == targets.len(), "{} logit rows for {} targets", logits.rows(), targets.len());
    ensure!(targets.iter().all(|&t| t < logits.cols()), "target out of range");
    let mut total = T::zero();
    let mut count = 0usize;
    for (r, &y) in targets.iter().enumerate() {
        if Some(y) == pad {
            continue;
        }
        let row = logits.row(r);
        total += log_sum_exp(row) - row[y];
        count += 1;
    }
    ensure!(count > 0, "no unmasked targets");
    Ok(total / T::of(count as f64))
}

fn default_warmup() -> u64 {
    200
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.98
}
fn default_adam_eps() -> f64 {
    1e-9
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}
fn default_form() -> SraForm {
    SraForm::Parallel
}
fn default_gap_weight() -> f64 {
    1.0
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    /// Sequences longer than this are cut to their first `max_len` events.
    #[serde(default)]
    pub max_len: Option<usize>,
    #[serde(default = "default_form")]
    pub form: SraForm,
    /// Weight of the gap-query loss relative to the next-token loss.
    #[serde(default = "default_gap_weight")]
    pub gap_weight: f64,
}

impl TrainConfig {
    pub fn new(steps: u64, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch_size,
            learning_rate,
            seed,
            warmup_steps: default_warmup(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            clip_norm: default_clip(),
            max_len: None,
            form: default_form(),
            gap_weight: default_gap_weight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size > 0, "batch_size must be positive");
        ensure!(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), "learning rate must be ≥ 0");
        ensure!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), "betas must lie in [0, 1)");
        ensure!(self.adam_eps > 0.0, "adam_eps must be positive");
        ensure!(self.clip_norm.is_none_or(|c| c > 0.0), "clip_norm must be positive");
        ensure!(self.gap_weight >= 0.0, "gap_weight must be ≥ 0");
        Ok(())
    }

    /// Linear warmup, then constant.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// First and second moments of every trainable value, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(num_params: usize) -> Self {
        AdamState { m: vec![T::zero(); num_params], v: vec![T::zero(); num_params], step: 0 }
    }
}

/// Summary of one optimizer update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    /// Optimized objective.
    pub loss: f64,
    /// Mean next-token cross-entropy.
    pub nll: f64,
    /// Mean cross-entropy of the gap-query stream.
    pub gap_nll: Option<f64>,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

/// Summed losses and gradient of one example.
pub struct ExampleGrad<T> {
    pub nll_sum: f64,
    pub gap_sum: Option<f64>,
    pub count: usize,
    pub grad: Vec<T>,
}

/// Loss sums and the gradient of `nll_sum + gap_weight · gap_sum`.
pub fn example_grad<T: Scalar>(
    params: &ModelParams<T>,
    ex: &Example,
    form: SraForm,
    gap_weight: f64,
) -> Result<ExampleGrad<T>> {
    let cfg = &params.config;
    let pad = cfg.pad_id();
    let weights: Vec<T> = ex.targets.iter().map(|&y| if y == pad { T::zero() } else { T::one() }).collect();
    let count = weights.iter().filter(|w| **w != T::zero()).count();
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params);
    let gap = cfg.gap_objective.map(|mode| (ex.target_times.as_slice(), mode));
    let out = forward_tape(&mut tape, &vars, params, &ex.tokens, &ex.times, gap, form)?;
    let nll = tape.cross_entropy(out.logits, &ex.targets, &weights)?;
    let (objective, gap_sum) = match out.gap_logits {
        Some(gl) => {
            let g = tape.cross_entropy(gl, &ex.targets, &weights)?;
            let gap_sum = tape.value(g).item()?.as_f64();
            let scaled = tape.scale(g, T::of(gap_weight));
            (tape.add(nll, scaled)?, Some(gap_sum))
        }
        None => (nll, None),
    };
    let nll_sum = tape.value(nll).item()?.as_f64();
    let grads = tape.backward(objective)?;
    let mut grad = Vec::with_capacity(params.num_params());
    for (&v, (_, m)) in vars.trainable.iter().zip(params.tensors()) {
        grad.extend(grads.get_or_zeros(v, m.shape()).into_data());
    }
    Ok(ExampleGrad { nll_sum, gap_sum, count, grad })
}

/// Indices of the batch used at `step`, a pure function of `(seed, step)`.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    sample(&mut rng, n, batch_size.min(n)).into_vec()
}

fn layer_norms<T: Scalar>(params: &ModelParams<T>, grad: &[T]) -> String {
    let mut groups: Vec<(String, f64)> = Vec::new();
    let mut at = 0;
    for (name, m) in params.tensors() {
        let key = match name.strip_prefix("layers.") {
            Some(rest) => format!("layer {}", rest.split('.').next().unwrap_or("?")),
            None => name.clone(),
        };
        let sq: f64 = grad[at..at + m.len()].iter().map(|g| g.as_f64() * g.as_f64()).sum();
        at += m.len();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, s)) => *s += sq,
            None => groups.push((key, sq)),
        }
    }
    groups.iter().map(|(k, s)| format!("{k}: {:.3e}", s.sqrt())).collect::<Vec<_>>().join(", ")
}

/// One optimizer update on `batch`.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    batch: &[Example],
    cfg: &TrainConfig,
) -> Result<StepStats> {
    cfg.validate()?;
    ensure!(!batch.is_empty(), "empty batch");
    let np = params.num_params();
    ensure!(adam.m.len() == np && adam.v.len() == np, "optimizer state does not match the model");
    let mut grad = vec![T::zero(); np];
    let (mut nll, mut gap, mut count) = (0.0, 0.0, 0usize);
    let mut has_gap = false;
    for ex in batch {
        let eg = example_grad(params, ex, cfg.form, cfg.gap_weight)?;
        for (g, e) in grad.iter_mut().zip(&eg.grad) {
            *g += *e;
        }
        nll += eg.nll_sum;
        if let Some(gs) = eg.gap_sum {
            gap += gs;
            has_gap = true;
        }
        count += eg.count;
    }
    ensure!(count > 0, "batch has no unmasked targets");
    let inv = T::of(1.0 / count as f64);
    for g in grad.iter_mut() {
        *g *= inv;
    }
    let (nll, gap) = (nll / count as f64, has_gap.then_some(gap / count as f64));
    let loss = nll + gap.map_or(0.0, |g| cfg.gap_weight * g);
    let norm = grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if !loss.is_finite() || !norm.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {loss} at step {}; gradient norms: {}",
            adam.step + 1,
            layer_norms(params, &grad)
        )));
    }
    if let Some(c) = cfg.clip_norm {
        if norm > c {
            let s = T::of(c / norm);
            for g in grad.iter_mut() {
                *g *= s;
            }
        }
    }
    adam.step += 1;
    let t = adam.step;
    let lr = cfg.learning_rate_at(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::of(1.0 - cfg.beta2.powf(t as f64));
    let (lr_t, eps) = (T::of(lr), T::of(cfg.adam_eps));
    let mut flat = params.flatten();
    for i in 0..np {
        let g = grad[i];
        adam.m[i] = b1 * adam.m[i] + (T::one() - b1) * g;
        adam.v[i] = b2 * adam.v[i] + (T::one() - b2) * g * g;
        let mh = adam.m[i] / c1;
        let vh = adam.v[i] / c2;
        flat[i] -= lr_t * mh / (vh.sqrt() + eps);
    }
    params.unflatten(&flat)?;
    Ok(StepStats { step: t, loss, nll, gap_nll: gap, grad_norm: norm, learning_rate: lr })
}

/// Runs updates from `adam.step` up to `cfg.steps`, calling `on_step` after
/// each one. Batches depend only on `(seed, step)`, so a run resumed from a
/// saved state continues exactly as an uninterrupted one.
pub fn train<T: Scalar, F>(
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    data: &[Example],
    cfg: &TrainConfig,
    mut on_step: F,
) -> Result<()>
where
    F: FnMut(&StepStats, &ModelParams<T>, &AdamState<T>) -> Result<()>,
{
    cfg.validate()?;
    ensure!(!data.is_empty() || cfg.steps <= adam.step, "no training data");
    while adam.step < cfg.steps {
        let idx = batch_indices(data.len(), cfg.batch_size, cfg.seed, adam.step);
        let batch: Vec<Example> = idx.iter().map(|&i| data[i].clone()).collect();
        let stats = train_step(params, adam, &batch, cfg)?;
        on_step(&stats, params, adam)?;
    }
    Ok(())
}

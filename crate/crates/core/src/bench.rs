//! Wall-time scaling of a full training step (forward and backward) and of
//! single time-specific queries.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::{example_grad, Ablation, Example, ModelConfig, ModelParams, StreamState};
use crate::odebridge::GapMode;
use crate::sra::SraForm;

/// Which attention computation a timing row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    RecurrentSra,
    ParallelSra,
    Softmax,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::RecurrentSra, Kernel::ParallelSra, Kernel::Softmax];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    /// History lengths at which single-query latency is measured.
    pub histories: Vec<usize>,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab_size: usize,
    /// Timed repetitions per point; the fastest is reported.
    pub reps: usize,
    pub queries: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: vec![256, 512, 1024, 2048],
            histories: vec![256, 1024],
            d: 32,
            heads: 4,
            layers: 1,
            vocab_size: 50,
            reps: 7,
            queries: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub kernel: Kernel,
    pub n: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTiming {
    pub history: usize,
    pub seconds_per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub train_step: Vec<StepTiming>,
    pub query: Vec<QueryTiming>,
}

impl BenchReport {
    /// `time(2n) / time(n)` for every consecutive pair of lengths that
    /// doubles, as `(n, ratio)`.
    pub fn doubling_ratios(&self, kernel: Kernel) -> Vec<(usize, f64)> {
        let rows: Vec<&StepTiming> = self.train_step.iter().filter(|r| r.kernel == kernel).collect();
        rows.windows(2).filter(|w| w[1].n == 2 * w[0].n).map(|w| (w[1].n, w[1].seconds / w[0].seconds)).collect()
    }

    /// Latency at the longest history over latency at the shortest.
    pub fn query_ratio(&self) -> Option<f64> {
        let first = self.query.first()?;
        let last = self.query.last()?;
        Some(last.seconds_per_query / first.seconds_per_query)
    }
}

impl BenchConfig {
    fn model(&self, kernel: Kernel) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.vocab_size, self.d, self.heads, self.layers);
        cfg.gap_objective = None;
        if kernel == Kernel::Softmax {
            cfg = Ablation::Gpt2.apply(&cfg);
        }
        cfg
    }

    fn example(&self, n: usize, rng: &mut ChaCha8Rng) -> Example {
        let mut t = 0.0;
        let mut times = Vec::with_capacity(n);
        for _ in 0..n {
            t += rng.random_range(0.0..1.0);
            times.push(t);
        }
        let targets: Vec<usize> = (0..n).map(|_| rng.random_range(1..self.vocab_size - 1)).collect();
        let mut tokens = vec![0];
        tokens.extend_from_slice(&targets[..n - 1]);
        let mut in_times = vec![times[0]];
        in_times.extend_from_slice(&times[..n - 1]);
        Example { tokens, times: in_times, targets, target_times: times }
    }
}

fn fastest(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Fastest wall time of one forward and backward pass at every length.
///
/// Repetitions are interleaved across lengths so that slow drift on a shared
/// host hits every length alike, and the minimum is kept as the estimate of
/// the intrinsic cost.
pub fn time_train_steps(cfg: &BenchConfig, kernel: Kernel) -> Result<Vec<StepTiming>> {
    ensure!(cfg.reps >= 1 && cfg.lengths.iter().all(|&n| n >= 1), "need lengths ≥ 1 and at least one repetition");
    let params = ModelParams::<f32>::init(&cfg.model(kernel), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let examples: Vec<Example> = cfg.lengths.iter().map(|&n| cfg.example(n, &mut rng)).collect();
    let form = match kernel {
        Kernel::RecurrentSra => SraForm::Recurrent,
        _ => SraForm::Parallel,
    };
    for ex in &examples {
        example_grad(&params, ex, form, 0.0)?;
    }
    let mut times = vec![Vec::with_capacity(cfg.reps); examples.len()];
    for _ in 0..cfg.reps {
        for (ex, t) in examples.iter().zip(&mut times) {
            let start = Instant::now();
            std::hint::black_box(example_grad(&params, ex, form, 0.0)?);
            t.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(cfg.lengths.iter().zip(&times).map(|(&n, t)| StepTiming { kernel, n, seconds: fastest(t) }).collect())
}

/// Fastest per-query latency of time-specific inference after absorbing
/// each configured history, interleaved like [`time_train_steps`].
pub fn time_queries(cfg: &BenchConfig) -> Result<Vec<QueryTiming>> {
    ensure!(
        cfg.queries >= 1 && cfg.reps >= 1 && cfg.histories.iter().all(|&h| h >= 1),
        "need histories, queries and repetitions"
    );
    let params = ModelParams::<f32>::init(&cfg.model(Kernel::RecurrentSra), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut states = Vec::with_capacity(cfg.histories.len());
    for &h in &cfg.histories {
        let ex = cfg.example(h, &mut rng);
        let mut state = StreamState::new(&params);
        for (&tok, &t) in ex.tokens.iter().zip(&ex.times) {
            state.absorb(&params, tok, t)?;
        }
        states.push(state);
    }
    let mut times = vec![Vec::with_capacity(cfg.reps); states.len()];
    for _ in 0..cfg.reps {
        for (state, t) in states.iter().zip(&mut times) {
            let last = state.last_time();
            let start = Instant::now();
            for q in 0..cfg.queries {
                std::hint::black_box(state.query(&params, last + 0.01 * q as f64, GapMode::HistoryOnly)?);
            }
            t.push(start.elapsed().as_secs_f64() / cfg.queries as f64);
        }
    }
    Ok(cfg
        .histories
        .iter()
        .zip(&times)
        .map(|(&history, t)| QueryTiming { history, seconds_per_query: fastest(t) })
        .collect())
}

/// Runs every configured timing point.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut train_step = Vec::new();
    for kernel in Kernel::ALL {
        train_step.extend(time_train_steps(cfg, kernel)?);
    }
    Ok(BenchReport { config: cfg.clone(), train_step, query: time_queries(cfg)? })
}

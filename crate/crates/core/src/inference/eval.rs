use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::forecast::{autoregressive_continue, prime, time_specific_continue, AbsorbMode};
use super::recall::rank_of;
use crate::datagen::{bayes_predictive, GeneratorSpec, IrregularSequence};
use crate::error::{ensure, Result};
use crate::model::ModelParams;
use crate::numerics::Scalar;
use crate::odebridge::GapMode;

/// How forecast targets are cut from each held-out sequence: the first
/// `window` observations form the look-up window and the next `horizon`
/// observations are the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub window: usize,
    pub horizon: usize,
    pub ks: Vec<usize>,
    pub gap_mode: GapMode,
    pub absorb: AbsorbMode,
    /// Upper edges (years since the last observation) of the gap buckets;
    /// a final open bucket is implied.
    pub gap_buckets: Vec<f64>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            window: 10,
            horizon: 10,
            ks: vec![5, 10, 15],
            gap_mode: GapMode::HistoryOnly,
            absorb: AbsorbMode::Evaluation,
            gap_buckets: vec![0.25, 1.0, 3.0],
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        ensure!(self.window >= 1, "window must be ≥ 1");
        ensure!(self.horizon >= 1, "horizon must be ≥ 1");
        ensure!(!self.ks.is_empty(), "need at least one K");
        for &k in &self.ks {
            ensure!(k >= 1 && k <= vocab, "K = {k} outside 1..={vocab}");
        }
        ensure!(self.gap_buckets.windows(2).all(|w| w[0] < w[1]), "gap bucket edges must increase");
        Ok(())
    }

    fn bucket_of(&self, gap: f64) -> usize {
        self.gap_buckets.partition_point(|&e| e <= gap)
    }

    fn bucket_labels(&self) -> Vec<String> {
        let mut lo = 0.0;
        let mut out = Vec::new();
        for &e in &self.gap_buckets {
            out.push(format!("[{lo},{e})"));
            lo = e;
        }
        out.push(format!("[{lo},inf)"));
        out
    }
}

/// Recall of one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub targets: usize,
    /// Keyed by `K`.
    pub recall: BTreeMap<usize, f64>,
    pub buckets: Vec<BucketRecall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRecall {
    pub gap: String,
    pub targets: usize,
    pub recall: BTreeMap<usize, f64>,
}

/// Per-target ranks of the truth under one predictor, with bucket ids.
#[derive(Debug, Clone, Default)]
struct Ranks {
    ranks: Vec<usize>,
    buckets: Vec<usize>,
}

impl Ranks {
    fn push(&mut self, rank: usize, bucket: usize) {
        self.ranks.push(rank);
        self.buckets.push(bucket);
    }

    fn report(&self, protocol: &EvalProtocol) -> RecallReport {
        let recall_of = |sel: &dyn Fn(usize) -> bool| -> (usize, BTreeMap<usize, f64>) {
            let idx: Vec<usize> = (0..self.ranks.len()).filter(|&i| sel(i)).collect();
            let n = idx.len();
            let map = protocol
                .ks
                .iter()
                .map(|&k| {
                    let hits = idx.iter().filter(|&&i| self.ranks[i] < k).count();
                    (k, if n == 0 { 0.0 } else { hits as f64 / n as f64 })
                })
                .collect();
            (n, map)
        };
        let (targets, recall) = recall_of(&|_| true);
        let buckets = protocol
            .bucket_labels()
            .into_iter()
            .enumerate()
            .map(|(b, gap)| {
                let (targets, recall) = recall_of(&|i| self.buckets[i] == b);
                BucketRecall { gap, targets, recall }
            })
            .collect();
        RecallReport { targets, recall, buckets }
    }
}

/// Recall of the model in both inference modes, plus optional baselines on
/// identical targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: EvalProtocol,
    pub patients: usize,
    /// `None` for models without time-specific inference.
    pub time_specific: Option<RecallReport>,
    pub auto_regressive: RecallReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bayes: Option<RecallReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal: Option<RecallReport>,
}

/// Forecast records of one patient, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub id: String,
    pub mode: String,
    pub target_times: Vec<f64>,
    pub topk: Vec<Vec<usize>>,
    pub truth: Vec<usize>,
    pub recall: f64,
}

/// Targets cut from `seq` by `protocol`, or `None` when it is too short.
pub fn cut_targets(
    seq: &IrregularSequence,
    protocol: &EvalProtocol,
) -> Option<(IrregularSequence, std::ops::Range<usize>)> {
    if seq.len() <= protocol.window {
        return None;
    }
    let end = seq.len().min(protocol.window + protocol.horizon);
    Some((seq.prefix(protocol.window), protocol.window..end))
}

/// Token frequencies of a training cohort, as a probability row.
pub fn marginal_frequencies(cohort: &[IrregularSequence], vocab: usize) -> Vec<f64> {
    let mut counts = vec![0.0; vocab];
    let mut total = 0.0;
    for s in cohort {
        for &c in &s.tokens {
            if c < vocab {
                counts[c] += 1.0;
                total += 1.0;
            }
        }
    }
    if total > 0.0 {
        for c in counts.iter_mut() {
            *c /= total;
        }
    }
    counts
}

/// Probability rows of both inference modes for one patient's targets.
pub struct PatientForecast {
    pub time_specific: Option<Vec<Vec<f64>>>,
    pub auto_regressive: Vec<Vec<f64>>,
}

/// Runs both inference modes over the targets of one patient.
///
/// In evaluation mode the truth is absorbed after every target and the
/// auto-regressive row is the ordinary next-token distribution; in rollout
/// mode the auto-regressive rows come from unit-step greedy decoding and the
/// time-specific rows absorb their own predictions.
pub fn forecast_patient<T: Scalar>(
    params: &ModelParams<T>,
    seq: &IrregularSequence,
    targets: std::ops::Range<usize>,
    protocol: &EvalProtocol,
) -> Result<PatientForecast> {
    let prefix = seq.prefix(targets.start);
    let times = &seq.times[targets.clone()];
    let truth = &seq.tokens[targets.clone()];
    let ts_ok = params.config.supports_time_specific();
    match protocol.absorb {
        AbsorbMode::Evaluation => {
            let mut state = prime(params, &prefix)?;
            let mut ts = Vec::new();
            let mut ar = Vec::new();
            for (&t, &y) in times.iter().zip(truth) {
                if ts_ok {
                    let logits = state.query(params, t, protocol.gap_mode)?;
                    ts.push(crate::numerics::softmax(&logits).into_iter().map(Scalar::as_f64).collect());
                }
                let last = state.last_logits().expect("primed");
                ar.push(crate::numerics::softmax(last).into_iter().map(Scalar::as_f64).collect());
                state.absorb(params, y, t)?;
            }
            Ok(PatientForecast { time_specific: ts_ok.then_some(ts), auto_regressive: ar })
        }
        AbsorbMode::Rollout => {
            let mut state = prime(params, &prefix)?;
            let ar = autoregressive_continue(params, &mut state.clone(), times.len())?.probs;
            let ts = if ts_ok {
                Some(
                    time_specific_continue(params, &mut state, times, protocol.gap_mode, AbsorbMode::Rollout, None)?
                        .probs,
                )
            } else {
                None
            };
            Ok(PatientForecast { time_specific: ts, auto_regressive: ar })
        }
    }
}

/// Ranks and exported records of one patient.
#[derive(Default)]
struct PatientScore {
    ts: Vec<(usize, usize)>,
    ar: Vec<(usize, usize)>,
    bayes: Vec<(usize, usize)>,
    marg: Vec<(usize, usize)>,
    records: Vec<ForecastRecord>,
}

fn score_patient<T: Scalar>(
    params: &ModelParams<T>,
    seq: &IrregularSequence,
    targets: std::ops::Range<usize>,
    protocol: &EvalProtocol,
    spec: Option<&GeneratorSpec>,
    marginal: Option<&[f64]>,
) -> Result<PatientScore> {
    seq.validate(Some(params.config.vocab_size))?;
    let k_export = protocol.ks.iter().copied().max().expect("validated");
    let fc = forecast_patient(params, seq, targets.clone(), protocol)?;
    let truth = &seq.tokens[targets.clone()];
    let times = &seq.times[targets.clone()];
    let buckets: Vec<usize> = targets.clone().map(|i| protocol.bucket_of(seq.times[i] - seq.times[i - 1])).collect();
    let mut out = PatientScore::default();
    let mut export = |mode: &str, rows: &[Vec<f64>], acc: &mut Vec<(usize, usize)>| {
        let mut hits = 0;
        for ((row, &y), &b) in rows.iter().zip(truth).zip(&buckets) {
            let r = rank_of(row, y);
            hits += usize::from(r < k_export);
            acc.push((r, b));
        }
        out.records.push(ForecastRecord {
            id: seq.id.clone(),
            mode: mode.to_string(),
            target_times: times.to_vec(),
            topk: rows.iter().map(|r| crate::numerics::top_k(r, k_export)).collect(),
            truth: truth.to_vec(),
            recall: hits as f64 / rows.len() as f64,
        });
    };
    let (mut ts, mut ar) = (Vec::new(), Vec::new());
    if let Some(rows) = &fc.time_specific {
        export("time_specific", rows, &mut ts);
    }
    export("auto_regressive", &fc.auto_regressive, &mut ar);
    (out.ts, out.ar) = (ts, ar);
    for (j, i) in targets.enumerate() {
        if let Some(spec) = spec {
            let row = bayes_predictive(spec, &seq.prefix(i), Some(seq.times[i]))?;
            out.bayes.push((rank_of(&row, seq.tokens[i]), buckets[j]));
        }
        if let Some(m) = marginal {
            out.marg.push((rank_of(m, seq.tokens[i]), buckets[j]));
        }
    }
    Ok(out)
}

/// Recall of the model on every eligible patient of `cohort`, with the Bayes
/// oracle (when `spec` is given) and a marginal-frequency ranking (when
/// `marginal` is given) scored on the same targets. The oracle conditions on
/// the true history before each target and knows the target time.
///
/// Patients are scored on all available cores; results are merged in cohort
/// order, so the report does not depend on the thread count.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    cohort: &[IrregularSequence],
    protocol: &EvalProtocol,
    spec: Option<&GeneratorSpec>,
    marginal: Option<&[f64]>,
) -> Result<(EvalReport, Vec<ForecastRecord>)> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    evaluate_with_threads(params, cohort, protocol, spec, marginal, threads)
}

/// [`evaluate`] on an explicit number of worker threads.
pub fn evaluate_with_threads<T: Scalar>(
    params: &ModelParams<T>,
    cohort: &[IrregularSequence],
    protocol: &EvalProtocol,
    spec: Option<&GeneratorSpec>,
    marginal: Option<&[f64]>,
    threads: usize,
) -> Result<(EvalReport, Vec<ForecastRecord>)> {
    let vocab = params.config.vocab_size;
    protocol.validate(vocab)?;
    ensure!(threads > 0, "evaluation needs at least one thread");
    if let Some(m) = marginal {
        ensure!(m.len() == vocab, "marginal row has {} entries for vocab {vocab}", m.len());
    }
    let jobs: Vec<(&IrregularSequence, std::ops::Range<usize>)> =
        cohort.iter().filter_map(|seq| cut_targets(seq, protocol).map(|(_, t)| (seq, t))).collect();
    let chunk = jobs.len().div_ceil(threads).max(1);
    let scores: Vec<Result<PatientScore>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(seq, t)| score_patient(params, seq, t.clone(), protocol, spec, marginal))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let (mut ts, mut ar, mut bayes, mut marg) =
        (Ranks::default(), Ranks::default(), Ranks::default(), Ranks::default());
    let mut records = Vec::new();
    for score in scores {
        let score = score?;
        for (acc, ranks) in
            [(&mut ts, score.ts), (&mut ar, score.ar), (&mut bayes, score.bayes), (&mut marg, score.marg)]
        {
            for (r, b) in ranks {
                acc.push(r, b);
            }
        }
        records.extend(score.records);
    }
    let report = EvalReport {
        protocol: protocol.clone(),
        patients: jobs.len(),
        time_specific: params.config.supports_time_specific().then(|| ts.report(protocol)),
        auto_regressive: ar.report(protocol),
        bayes: spec.map(|_| bayes.report(protocol)),
        marginal: marginal.map(|_| marg.report(protocol)),
    };
    Ok((report, records))
}

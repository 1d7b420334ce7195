use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const SPEC_VERSION: u32 = 1;

/// A comorbidity link: once `trigger` has been observed, the emission weight
/// of `boosted` is multiplied by `1 + (multiplier − 1)·e^{−λ·elapsed}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boost {
    pub trigger: usize,
    pub boosted: usize,
    pub multiplier: f64,
}

/// Codes and states that define the synthetic outcome labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub drug_trigger: usize,
    pub drug_code: usize,
    /// Years after the first trigger within which the drug code counts.
    pub drug_window: f64,
    pub phenotype_state: usize,
}

/// Ground-truth generative process: a latent Markov chain over disease
/// clusters emitting codes, with state-dependent exponential gaps.
///
/// Token `0` is reserved for the start-of-sequence marker and token
/// `vocab_size − 1` for padding; both must carry zero emission mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub version: u32,
    pub vocab_size: usize,
    pub latent_states: usize,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    /// Exponential rate (events per year) of the gap that precedes an event
    /// in each state.
    pub gap_rates: Vec<f64>,
    #[serde(default)]
    pub comorbidity_boosts: Vec<Boost>,
    /// Decay rate λ (per year) of every boost.
    pub boost_decay: f64,
    /// Age range of the first event.
    pub start_age: [f64; 2],
    pub labels: LabelSpec,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    ensure!(row.iter().all(|p| p.is_finite() && *p >= 0.0), "{what} has negative or non-finite entries");
    let s: f64 = row.iter().sum();
    ensure!((s - 1.0).abs() <= 1e-9, "{what} sums to {s}, not 1");
    Ok(())
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.version == SPEC_VERSION, "spec version {} unsupported (expected {SPEC_VERSION})", self.version);
        let (k, v) = (self.latent_states, self.vocab_size);
        ensure!(k >= 1, "need at least one latent state");
        ensure!(v >= 3, "vocab_size must leave room for reserved tokens");
        ensure!(self.initial.len() == k, "initial has {} entries for {k} states", self.initial.len());
        check_distribution(&self.initial, "initial")?;
        ensure!(self.transition.len() == k, "transition needs {k} rows");
        for (i, row) in self.transition.iter().enumerate() {
            ensure!(row.len() == k, "transition row {i} has {} entries", row.len());
            check_distribution(row, &format!("transition row {i}"))?;
        }
        ensure!(self.emission.len() == k, "emission needs {k} rows");
        for (i, row) in self.emission.iter().enumerate() {
            ensure!(row.len() == v, "emission row {i} has {} entries", row.len());
            check_distribution(row, &format!("emission row {i}"))?;
            ensure!(row[0] == 0.0 && row[v - 1] == 0.0, "emission row {i} puts mass on a reserved token");
        }
        ensure!(self.gap_rates.len() == k, "gap_rates needs {k} entries");
        ensure!(self.gap_rates.iter().all(|r| r.is_finite() && *r > 0.0), "gap rates must be positive");
        for b in &self.comorbidity_boosts {
            ensure!(b.multiplier > 0.0 && b.multiplier.is_finite(), "boost multipliers must be positive");
            ensure!(b.trigger < v && b.boosted < v, "boost codes out of range");
        }
        ensure!(self.boost_decay >= 0.0 && self.boost_decay.is_finite(), "boost_decay must be ≥ 0");
        ensure!(
            self.start_age[0].is_finite() && self.start_age[0] <= self.start_age[1] && self.start_age[1].is_finite(),
            "start_age must be an ordered finite range"
        );
        let l = &self.labels;
        ensure!(l.drug_trigger < v && l.drug_code < v, "label codes out of range");
        ensure!(l.phenotype_state < k, "phenotype state out of range");
        ensure!(l.drug_window >= 0.0, "drug window must be ≥ 0");
        Ok(())
    }

    /// Codes that can actually be emitted, `1..vocab_size−1`.
    pub fn codes(&self) -> std::ops::Range<usize> {
        1..self.vocab_size - 1
    }

    /// The default benchmark: 8 sticky disease clusters over 48 codes, gap
    /// rates spread over [0.2, 3.0] events per year, and three comorbidity
    /// links.
    pub fn canonical() -> Self {
        let k = 8;
        let v = 50;
        let per = 6;
        let primary = [0.30, 0.20, 0.12, 0.08, 0.06, 0.04];
        let background = 0.2 / (48 - per) as f64;
        let emission = (0..k)
            .map(|s| {
                let mut row = vec![0.0; v];
                for c in 1..49 {
                    row[c] = background;
                }
                for (j, &w) in primary.iter().enumerate() {
                    row[1 + per * s + j] = w;
                }
                row
            })
            .collect();
        let transition = (0..k)
            .map(|s| {
                let mut row = vec![0.0; k];
                row[s] += 0.6;
                row[(s + 1) % k] += 0.2;
                row[(s + k - 1) % k] += 0.1;
                row[(s + 4) % k] += 0.1;
                row
            })
            .collect();
        GeneratorSpec {
            version: SPEC_VERSION,
            vocab_size: v,
            latent_states: k,
            initial: vec![1.0 / k as f64; k],
            transition,
            emission,
            gap_rates: vec![0.2, 0.35, 0.6, 0.9, 1.3, 1.8, 2.4, 3.0],
            comorbidity_boosts: vec![
                Boost { trigger: 7, boosted: 31, multiplier: 12.0 },
                Boost { trigger: 14, boosted: 44, multiplier: 8.0 },
                Boost { trigger: 3, boosted: 22, multiplier: 6.0 },
            ],
            boost_decay: 1.0,
            start_age: [30.0, 60.0],
            labels: LabelSpec { drug_trigger: 7, drug_code: 31, drug_window: 0.5, phenotype_state: 5 },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: GeneratorSpec =
            toml::from_str(text).map_err(|e| Error::Format(format!("bad generator spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Emission weights of state `z` for an event at time `t`, after the
    /// history `hist` (codes and times strictly before the event),
    /// normalized.
    pub fn emission_at(&self, z: usize, hist_tokens: &[usize], hist_times: &[f64], t: f64) -> Vec<f64> {
        let mut row = self.emission[z].clone();
        if self.comorbidity_boosts.is_empty() {
            return row;
        }
        let factors = self.boost_factors(hist_tokens, hist_times, t);
        let mut total = 0.0;
        for (c, w) in row.iter_mut().enumerate() {
            *w *= factors[c];
            total += *w;
        }
        for w in row.iter_mut() {
            *w /= total;
        }
        row
    }

    /// Multiplicative boost on every code at time `t`, from the most recent
    /// occurrence of each trigger in the history.
    pub fn boost_factors(&self, hist_tokens: &[usize], hist_times: &[f64], t: f64) -> Vec<f64> {
        let mut f = vec![1.0; self.vocab_size];
        for b in &self.comorbidity_boosts {
            let last = hist_tokens.iter().zip(hist_times).rev().find(|(&c, _)| c == b.trigger).map(|(_, &tt)| tt);
            if let Some(tt) = last {
                let elapsed = (t - tt).max(0.0);
                f[b.boosted] *= 1.0 + (b.multiplier - 1.0) * (-self.boost_decay * elapsed).exp();
            }
        }
        f
    }

    /// Stationary distribution of the latent chain, by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let k = self.latent_states;
        let mut p = vec![1.0 / k as f64; k];
        for _ in 0..100_000 {
            let mut next = vec![0.0; k];
            for (i, &pi) in p.iter().enumerate() {
                for (j, &t) in self.transition[i].iter().enumerate() {
                    next[j] += pi * t;
                }
            }
            let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if diff < 1e-15 {
                break;
            }
        }
        p
    }

    /// Marginal code distribution under the stationary chain, ignoring
    /// boosts.
    pub fn stationary_code_distribution(&self) -> Vec<f64> {
        let pi = self.stationary();
        let mut out = vec![0.0; self.vocab_size];
        for (z, &p) in pi.iter().enumerate() {
            for (c, &e) in self.emission[z].iter().enumerate() {
                out[c] += p * e;
            }
        }
        out
    }

    /// Entropy (nats) of [`stationary_code_distribution`](Self::stationary_code_distribution).
    pub fn unigram_entropy(&self) -> f64 {
        self.stationary_code_distribution().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
    }
}

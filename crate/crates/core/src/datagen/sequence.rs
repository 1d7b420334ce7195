use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Synthetic outcome flags attached to a patient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    /// The designated drug code appeared within the window after the first
    /// trigger code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drug_start: Option<bool>,
    /// The latent path visited the designated phenotype state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phenotype: Option<bool>,
}

/// Ordered `(token, time)` observations of one patient. Times are ages in
/// years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularSequence {
    pub id: String,
    pub tokens: Vec<usize>,
    pub times: Vec<f64>,
    #[serde(default)]
    pub labels: Labels,
}

impl IrregularSequence {
    pub fn new(id: impl Into<String>, tokens: Vec<usize>, times: Vec<f64>) -> Result<Self> {
        let s = IrregularSequence { id: id.into(), tokens, times, labels: Labels::default() };
        s.validate(None)?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// The first `n` observations.
    pub fn prefix(&self, n: usize) -> IrregularSequence {
        let n = n.min(self.len());
        IrregularSequence {
            id: self.id.clone(),
            tokens: self.tokens[..n].to_vec(),
            times: self.times[..n].to_vec(),
            labels: self.labels,
        }
    }

    /// Checks lengths, monotone finite times and, when given, the vocabulary
    /// bound.
    pub fn validate(&self, vocab_size: Option<usize>) -> Result<()> {
        ensure!(
            self.tokens.len() == self.times.len(),
            "sequence {}: {} tokens but {} times",
            self.id,
            self.tokens.len(),
            self.times.len()
        );
        ensure!(self.times.iter().all(|t| t.is_finite()), "sequence {}: non-finite time", self.id);
        ensure!(self.times.windows(2).all(|w| w[0] <= w[1]), "sequence {}: times are not non-decreasing", self.id);
        if let Some(v) = vocab_size {
            ensure!(self.tokens.iter().all(|&t| t < v), "sequence {}: token out of range for vocab {v}", self.id);
        }
        Ok(())
    }
}

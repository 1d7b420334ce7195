use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::Precision;
use crate::odebridge::GapMode;
use crate::positional::RopeConfig;
use crate::sra::{GateMode, DEFAULT_TAU};

/// Fixed decay used by the fixed-γ ablation.
pub const DEFAULT_FIXED_GAMMA: f64 = 0.96;
/// Start-of-sequence token.
pub const SOS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayGating {
    On,
    FixedGamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    Rope,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    Sra,
    SoftmaxGpt2,
}

/// The nested ablation ladder: each variant removes one more component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    FixedGamma,
    AbsolutePe,
    Gpt2,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::FixedGamma, Ablation::AbsolutePe, Ablation::Gpt2];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::FixedGamma => "fixed_gamma",
            Ablation::AbsolutePe => "absolute_pe",
            Ablation::Gpt2 => "gpt2",
        }
    }

    /// Whether the variant can carry a state across a gap.
    pub fn supports_time_specific(self) -> bool {
        self != Ablation::Gpt2
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        let fixed = match base.decay_gating {
            DecayGating::FixedGamma(g) => g,
            DecayGating::On => DEFAULT_FIXED_GAMMA,
        };
        match self {
            Ablation::Full => {}
            Ablation::FixedGamma => cfg.decay_gating = DecayGating::FixedGamma(fixed),
            Ablation::AbsolutePe => {
                cfg.decay_gating = DecayGating::FixedGamma(fixed);
                cfg.positional = Positional::Absolute;
            }
            Ablation::Gpt2 => {
                cfg.decay_gating = DecayGating::FixedGamma(fixed);
                cfg.positional = Positional::Absolute;
                cfg.attention = Attention::SoftmaxGpt2;
                cfg.gap_objective = None;
            }
        }
        cfg
    }
}

fn default_norm_eps() -> f64 {
    1e-5
}

/// Architecture of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub tau: f64,
    pub rope: RopeConfig,
    pub precision: Precision,
    pub decay_gating: DecayGating,
    pub positional: Positional,
    pub attention: Attention,
    /// Reuse the embedding table as the output projection.
    #[serde(default)]
    pub tie_output: bool,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    /// Adds a second loss on queries carried to the next event time with
    /// the given gap mode.
    #[serde(default)]
    pub gap_objective: Option<GapMode>,
}

impl ModelConfig {
    /// d=32, H=4, L=2, vocab 50, τ=20.
    pub fn toy() -> Self {
        Self::new(50, 32, 4, 2)
    }

    pub fn new(vocab_size: usize, d: usize, heads: usize, layers: usize) -> Self {
        ModelConfig {
            vocab_size,
            d,
            heads,
            layers,
            ff_width: 2 * d,
            tau: DEFAULT_TAU,
            rope: RopeConfig::new(d / heads.max(1)),
            precision: Precision::Single,
            decay_gating: DecayGating::On,
            positional: Positional::Rope,
            attention: Attention::Sra,
            tie_output: false,
            norm_eps: default_norm_eps(),
            gap_objective: Some(GapMode::HistoryOnly),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn pad_id(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn gate_mode(&self) -> GateMode {
        match self.decay_gating {
            DecayGating::On => GateMode::Data,
            DecayGating::FixedGamma(g) => GateMode::Fixed(g),
        }
    }

    /// Rotary encoding is used inside attention only for SRA with RoPE.
    pub fn uses_rope(&self) -> bool {
        self.positional == Positional::Rope && self.attention == Attention::Sra
    }

    pub fn has_gate_weights(&self) -> bool {
        self.attention == Attention::Sra && self.decay_gating == DecayGating::On
    }

    pub fn supports_time_specific(&self) -> bool {
        self.attention == Attention::Sra
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.vocab_size >= 2, "vocab_size must be at least 2");
        ensure!(self.d > 0 && self.heads > 0, "d and heads must be positive");
        ensure!(self.d.is_multiple_of(self.heads), "d = {} not divisible by H = {}", self.d, self.heads);
        ensure!(self.head_dim().is_multiple_of(2), "head_dim {} must be even", self.head_dim());
        ensure!(self.layers > 0 && self.ff_width > 0, "layers and ff_width must be positive");
        ensure!(self.tau > 0.0 && self.tau.is_finite(), "tau must be positive");
        ensure!(self.norm_eps > 0.0, "norm_eps must be positive");
        ensure!(
            self.rope.head_dim == self.head_dim(),
            "rope.head_dim {} != d/H = {}",
            self.rope.head_dim,
            self.head_dim()
        );
        self.rope.validate()?;
        if let DecayGating::FixedGamma(g) = self.decay_gating {
            ensure!(g > 0.0 && g <= 1.0, "fixed gamma must lie in (0, 1], got {g}");
        }
        ensure!(
            self.gap_objective.is_none() || self.attention == Attention::Sra,
            "the gap objective needs SRA attention"
        );
        Ok(())
    }

    /// Canonical JSON text, used for checkpoints and hashes.
    pub fn canonical_text(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

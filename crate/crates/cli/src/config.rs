use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trajgpt::bench::BenchConfig;
use trajgpt::inference::{AbsorbMode, EvalProtocol};
use trajgpt::model::{Ablation, Attention, DecayGating, ModelConfig, Positional, TrainConfig};
use trajgpt::odebridge::GapMode;
use trajgpt::positional::RopeConfig;
use trajgpt::sra::SraForm;
use trajgpt::{Error, Precision, Result};

/// Everything a command may read from the `--config` file. Relative paths
/// are taken from the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Output directory for reports, logs and the default checkpoint.
    pub out: Option<PathBuf>,
    /// Model checkpoint; defaults to `model.ckpt` under `out`.
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub risk: RiskSection,
    #[serde(default)]
    pub embed: EmbedSection,
    #[serde(default)]
    pub ablate: AblateSection,
    pub bench: Option<BenchConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Generator spec; also enables the Bayes baseline in evaluation.
    pub spec: Option<PathBuf>,
    pub patients: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub split: [f64; 3],
    /// Directory holding train/valid/test files and the manifest.
    pub dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            spec: None,
            patients: 8000,
            min_len: 20,
            max_len: 60,
            split: [0.8, 0.1, 0.1],
            dir: PathBuf::from("data"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub vocab_size: Option<usize>,
    pub d: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub ff_width: Option<usize>,
    pub tau: Option<f64>,
    pub precision: Option<Precision>,
    pub decay_gating: Option<DecayGating>,
    pub positional: Option<Positional>,
    pub attention: Option<Attention>,
    pub tie_output: Option<bool>,
    /// `"history_only"`, `"full"` or `"none"`.
    pub gap_objective: Option<String>,
    /// Applied last, on top of the fields above.
    pub ablation: Option<Ablation>,
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelConfig> {
        let toy = ModelConfig::toy();
        let mut cfg = ModelConfig::new(
            self.vocab_size.unwrap_or(toy.vocab_size),
            self.d.unwrap_or(toy.d),
            self.heads.unwrap_or(toy.heads),
            self.layers.unwrap_or(toy.layers),
        );
        if let Some(f) = self.ff_width {
            cfg.ff_width = f;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(p) = self.precision {
            cfg.precision = p;
        }
        if let Some(g) = self.decay_gating {
            cfg.decay_gating = g;
        }
        if let Some(p) = self.positional {
            cfg.positional = p;
        }
        if let Some(a) = self.attention {
            cfg.attention = a;
        }
        if let Some(t) = self.tie_output {
            cfg.tie_output = t;
        }
        if let Some(g) = &self.gap_objective {
            cfg.gap_objective = match g.as_str() {
                "none" => None,
                other => Some(other.parse::<GapMode>()?),
            };
        }
        cfg.rope = RopeConfig::new(cfg.d / cfg.heads.max(1));
        if let Some(a) = self.ablation {
            cfg = a.apply(&cfg);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub clip_norm: Option<f64>,
    pub max_len: Option<usize>,
    pub gap_weight: f64,
    pub form: SraForm,
    /// Save a resumable checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 2000,
            batch_size: 16,
            learning_rate: 3e-3,
            warmup_steps: 200,
            clip_norm: Some(1.0),
            max_len: Some(64),
            gap_weight: 1.0,
            form: SraForm::Parallel,
            checkpoint_every: 500,
        }
    }
}

impl TrainSection {
    pub fn build(&self, seed: u64) -> Result<TrainConfig> {
        let mut tc = TrainConfig::new(self.steps, self.batch_size, self.learning_rate, seed);
        tc.warmup_steps = self.warmup_steps;
        tc.clip_norm = self.clip_norm;
        tc.max_len = self.max_len;
        tc.gap_weight = self.gap_weight;
        tc.form = self.form;
        tc.validate()?;
        Ok(tc)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub window: Option<usize>,
    pub horizon: Option<usize>,
    pub ks: Option<Vec<usize>>,
    pub gap_mode: Option<GapMode>,
    pub absorb: Option<AbsorbMode>,
    pub gap_buckets: Option<Vec<f64>>,
    /// Predictor exported by `forecast`.
    pub inference: Option<InferenceMode>,
}

/// Which predictor `forecast` exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Auto-regressive next-token prediction.
    Auto,
    /// Time-specific prediction at the target timestamps.
    Time,
}

impl EvalSection {
    pub fn build(&self) -> EvalProtocol {
        let d = EvalProtocol::default();
        EvalProtocol {
            window: self.window.unwrap_or(d.window),
            horizon: self.horizon.unwrap_or(d.horizon),
            ks: self.ks.clone().unwrap_or(d.ks),
            gap_mode: self.gap_mode.unwrap_or(d.gap_mode),
            absorb: self.absorb.unwrap_or(d.absorb),
            gap_buckets: self.gap_buckets.clone().unwrap_or(d.gap_buckets),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    /// Code whose risk is traced; defaults to the spec's first boosted code.
    pub code: Option<usize>,
    pub step: f64,
    /// Years before the first and after the last observation.
    pub before: f64,
    pub after: f64,
    pub patients: Option<usize>,
}

impl Default for RiskSection {
    fn default() -> Self {
        RiskSection { code: None, step: 0.25, before: 1.0, after: 2.0, patients: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSection {
    /// Pool over at most this many leading observations.
    pub truncate_at: Option<usize>,
    /// Stop pooling before the first occurrence of this code.
    pub truncate_before_code: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub variants: Vec<Ablation>,
    pub k: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection { seeds: vec![0], variants: Ablation::ALL.to_vec(), k: 10 }
    }
}

/// A parsed config with its location and content hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
    pub hash: String,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        let mut loaded = Loaded { config, base, hash: String::new() };
        loaded.rehash();
        Ok(loaded)
    }

    /// Recomputes the hash after command-line overrides.
    pub fn rehash(&mut self) {
        let canonical = serde_json::to_string(&self.config).expect("config serializes");
        self.hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(&self.config.data.dir)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(self.config.out.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn spec_path(&self) -> Option<PathBuf> {
        self.config.data.spec.as_deref().map(|p| self.resolve(p))
    }

    pub fn seed(&self) -> Result<u64> {
        self.config
            .seed
            .ok_or_else(|| Error::Contract("a seed is required (set `seed` in the config or pass --seed)".into()))
    }
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{Attention, ModelConfig};
use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Scalar};
use crate::sra::SraParams;

/// Weights of one block: pre-norm attention followed by pre-norm
/// feed-forward.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub norm_attn: Matrix<T>,
    /// Projections and decay vectors. For softmax attention only the four
    /// projections are used.
    pub attn: SraParams<T>,
    pub norm_ff: Matrix<T>,
    pub ff_w1: Matrix<T>,
    pub ff_b1: Matrix<T>,
    pub ff_w2: Matrix<T>,
    pub ff_b2: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub embedding: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub norm_final: Matrix<T>,
    /// `d × vocab`; `None` when tied to the embedding table.
    pub head: Option<Matrix<T>>,
    pub head_bias: Matrix<T>,
}

fn normal<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let data = (0..rows * cols).map(|_| T::of(dist.sample(rng))).collect();
    Matrix::from_vec(rows, cols, data).expect("finite init")
}

/// Layer hyper-parameters as seen by the SRA module.
pub(crate) fn attn_hyper<T: Scalar>(cfg: &ModelConfig, w: [Matrix<T>; 5]) -> SraParams<T> {
    let [w_q, w_k, w_v, w_o, w_gamma] = w;
    SraParams {
        w_q,
        w_k,
        w_v,
        w_o,
        w_gamma,
        tau: cfg.tau,
        heads: cfg.heads,
        rope: cfg.uses_rope().then_some(cfg.rope),
        gate: cfg.gate_mode(),
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Deterministic initialization. Projections are drawn with standard
    /// deviation `1/√fan_in`; residual outputs are further scaled by
    /// `1/√(2L)`; decay vectors start at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, ff, v) = (cfg.d, cfg.ff_width, cfg.vocab_size);
        let s_in = 1.0 / (d as f64).sqrt();
        let s_res = s_in / ((2 * cfg.layers) as f64).sqrt();
        let embedding = normal(&mut rng, v, d, 1.0);
        let layers = (0..cfg.layers)
            .map(|_| {
                let w = [
                    normal(&mut rng, d, d, s_in),
                    normal(&mut rng, d, d, s_in),
                    normal(&mut rng, d, d, s_in),
                    normal(&mut rng, d, d, s_res),
                    Matrix::zeros(cfg.heads, d),
                ];
                LayerParams {
                    norm_attn: Matrix::filled(1, d, T::one()),
                    attn: attn_hyper(&cfg, w),
                    norm_ff: Matrix::filled(1, d, T::one()),
                    ff_w1: normal(&mut rng, d, ff, s_in),
                    ff_b1: Matrix::zeros(1, ff),
                    ff_w2: normal(&mut rng, ff, d, s_res * (d as f64 / ff as f64).sqrt()),
                    ff_b2: Matrix::zeros(1, d),
                }
            })
            .collect();
        let head = (!cfg.tie_output).then(|| normal(&mut rng, d, v, s_in));
        Ok(ModelParams {
            embedding,
            layers,
            norm_final: Matrix::filled(1, d, T::one()),
            head,
            head_bias: Matrix::zeros(1, v),
            config: cfg,
        })
    }

    /// Trainable tensors in canonical order, with their names.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let cfg = &self.config;
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{l}.{n}");
            out.push((p("norm_attn"), &layer.norm_attn));
            out.push((p("w_q"), &layer.attn.w_q));
            out.push((p("w_k"), &layer.attn.w_k));
            out.push((p("w_v"), &layer.attn.w_v));
            out.push((p("w_o"), &layer.attn.w_o));
            if cfg.has_gate_weights() {
                out.push((p("w_gamma"), &layer.attn.w_gamma));
            }
            out.push((p("norm_ff"), &layer.norm_ff));
            out.push((p("ff_w1"), &layer.ff_w1));
            out.push((p("ff_b1"), &layer.ff_b1));
            out.push((p("ff_w2"), &layer.ff_w2));
            out.push((p("ff_b2"), &layer.ff_b2));
        }
        out.push(("norm_final".to_string(), &self.norm_final));
        if let Some(h) = &self.head {
            out.push(("head".to_string(), h));
        }
        out.push(("head_bias".to_string(), &self.head_bias));
        out
    }

    /// Mutable view of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let gate = self.config.has_gate_weights();
        let mut out = vec![&mut self.embedding];
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.norm_attn);
            out.push(&mut layer.attn.w_q);
            out.push(&mut layer.attn.w_k);
            out.push(&mut layer.attn.w_v);
            out.push(&mut layer.attn.w_o);
            if gate {
                out.push(&mut layer.attn.w_gamma);
            }
            out.push(&mut layer.norm_ff);
            out.push(&mut layer.ff_w1);
            out.push(&mut layer.ff_b1);
            out.push(&mut layer.ff_w2);
            out.push(&mut layer.ff_b2);
        }
        out.push(&mut self.norm_final);
        if let Some(h) = self.head.as_mut() {
            out.push(h);
        }
        out.push(&mut self.head_bias);
        out
    }

    /// Expected shape of every trainable tensor, canonical order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let (d, ff, v, h) = (config.d, config.ff_width, config.vocab_size, config.heads);
        let mut out = vec![("embedding".to_string(), (v, d))];
        for l in 0..config.layers {
            let p = |n: &str| format!("layers.{l}.{n}");
            out.push((p("norm_attn"), (1, d)));
            for n in ["w_q", "w_k", "w_v", "w_o"] {
                out.push((p(n), (d, d)));
            }
            if config.has_gate_weights() {
                out.push((p("w_gamma"), (h, d)));
            }
            out.push((p("norm_ff"), (1, d)));
            out.push((p("ff_w1"), (d, ff)));
            out.push((p("ff_b1"), (1, ff)));
            out.push((p("ff_w2"), (ff, d)));
            out.push((p("ff_b2"), (1, d)));
        }
        out.push(("norm_final".to_string(), (1, d)));
        if !config.tie_output {
            out.push(("head".to_string(), (d, v)));
        }
        out.push(("head_bias".to_string(), (1, v)));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|(_, m)| m.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[T]) -> Result<()> {
        ensure!(flat.len() == self.num_params(), "expected {} values, got {}", self.num_params(), flat.len());
        let mut at = 0;
        for m in self.tensors_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Checks shapes against the config and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = Self::expected_shapes(&self.config);
        let actual = self.tensors();
        ensure!(expected.len() == actual.len(), "tensor count mismatch");
        for ((en, es), (an, m)) in expected.iter().zip(&actual) {
            ensure!(en == an && *es == m.shape(), "{an}: shape {:?}, expected {es:?}", m.shape());
            ensure!(m.is_finite(), "{an} holds non-finite values");
        }
        ensure!(
            self.config.attention == Attention::Sra || self.config.gap_objective.is_none(),
            "softmax attention has no gap objective"
        );
        Ok(())
    }

    /// Builds parameters from named tensors in canonical order.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<(String, Matrix<T>)>) -> Result<Self> {
        let mut p = Self::init(config, 0)?;
        let expected = Self::expected_shapes(config);
        ensure!(tensors.len() == expected.len(), "expected {} tensors, got {}", expected.len(), tensors.len());
        for ((en, _), (n, _)) in expected.iter().zip(&tensors) {
            ensure!(en == n, "tensor {n} where {en} was expected");
        }
        for (slot, (_, m)) in p.tensors_mut().into_iter().zip(tensors) {
            *slot = m;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                norm_attn: l.norm_attn.cast(),
                attn: SraParams {
                    w_q: l.attn.w_q.cast(),
                    w_k: l.attn.w_k.cast(),
                    w_v: l.attn.w_v.cast(),
                    w_o: l.attn.w_o.cast(),
                    w_gamma: l.attn.w_gamma.cast(),
                    tau: l.attn.tau,
                    heads: l.attn.heads,
                    rope: l.attn.rope,
                    gate: l.attn.gate,
                },
                norm_ff: l.norm_ff.cast(),
                ff_w1: l.ff_w1.cast(),
                ff_b1: l.ff_b1.cast(),
                ff_w2: l.ff_w2.cast(),
                ff_b2: l.ff_b2.cast(),
            })
            .collect();
        ModelParams {
            config: self.config.clone(),
            embedding: self.embedding.cast(),
            layers,
            norm_final: self.norm_final.cast(),
            head: self.head.as_ref().map(|h| h.cast()),
            head_bias: self.head_bias.cast(),
        }
    }
}

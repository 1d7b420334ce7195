//! Token-at-a-time evaluation with carried state.
//!
//! Each absorbed observation costs the same regardless of how many came
//! before it (for SRA layers). The arithmetic mirrors the tape forward pass
//! operation for operation, so logits agree with [`forward`](super::forward)
//! in recurrent form.

use super::config::{Attention, Positional};
use super::params::{LayerParams, ModelParams};
use crate::error::{ensure, Result};
use crate::numerics::{dot, gelu, softmax_in_place, Matrix, Scalar};
use crate::odebridge::{time_specific_output, GapMode};
use crate::positional::{absolute_encoding, rope_rotate};
use crate::sra::{compute_gamma, recurrent_step, SraState};

#[derive(Debug, Clone)]
enum LayerState<T> {
    Sra(Vec<SraState<T>>),
    /// Key and value rows of every head, for the softmax ablation.
    Softmax {
        keys: Vec<Vec<Vec<T>>>,
        values: Vec<Vec<Vec<T>>>,
    },
}

/// Carried state of a whole model.
#[derive(Debug, Clone)]
pub struct StreamState<T> {
    layers: Vec<LayerState<T>>,
    last_input: Option<Vec<T>>,
    last_logits: Option<Vec<T>>,
    last_time: f64,
    len: usize,
}

fn rms_norm_row<T: Scalar>(x: &[T], gain: &Matrix<T>, eps: T) -> Vec<T> {
    let d = T::of(x.len() as f64);
    let ms = x.iter().fold(T::zero(), |acc, &v| acc + v * v) / d;
    let inv = T::one() / (ms + eps).sqrt();
    x.iter().zip(gain.data()).map(|(&xv, &g)| xv * inv * g).collect()
}

fn row_mul<T: Scalar>(x: &[T], w: &Matrix<T>) -> Result<Vec<T>> {
    Ok(Matrix::row_vector(x).matmul(w)?.into_data())
}

fn add_into<T: Scalar>(h: &mut [T], a: &[T]) {
    for (x, &y) in h.iter_mut().zip(a) {
        *x += y;
    }
}

fn feed_forward<T: Scalar>(lp: &LayerParams<T>, h: &mut [T], eps: T) -> Result<()> {
    let x = rms_norm_row(h, &lp.norm_ff, eps);
    let mut a = row_mul(&x, &lp.ff_w1)?;
    add_into(&mut a, lp.ff_b1.data());
    let a: Vec<T> = a.into_iter().map(gelu).collect();
    let mut b = row_mul(&a, &lp.ff_w2)?;
    add_into(&mut b, lp.ff_b2.data());
    add_into(h, &b);
    Ok(())
}

fn head_logits<T: Scalar>(params: &ModelParams<T>, h: &[T], eps: T) -> Result<Vec<T>> {
    let x = rms_norm_row(h, &params.norm_final, eps);
    let mut logits = match &params.head {
        Some(w) => row_mul(&x, w)?,
        None => Matrix::row_vector(&x).matmul_t(&params.embedding)?.into_data(),
    };
    add_into(&mut logits, params.head_bias.data());
    crate::error::check_finite(&Matrix::row_vector(&logits), "logits")?;
    Ok(logits)
}

impl<T: Scalar> StreamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let cfg = &params.config;
        let layers = (0..cfg.layers)
            .map(|_| match cfg.attention {
                Attention::Sra => LayerState::Sra(vec![SraState::new(cfg.head_dim()); cfg.heads]),
                Attention::SoftmaxGpt2 => {
                    LayerState::Softmax { keys: vec![Vec::new(); cfg.heads], values: vec![Vec::new(); cfg.heads] }
                }
            })
            .collect();
        StreamState { layers, last_input: None, last_logits: None, last_time: f64::NEG_INFINITY, len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    /// Next-token logits after the most recent observation.
    pub fn last_logits(&self) -> Option<&[T]> {
        self.last_logits.as_deref()
    }

    /// Per-head states of an SRA layer.
    pub fn sra_states(&self, layer: usize) -> Option<&[SraState<T>]> {
        match self.layers.get(layer)? {
            LayerState::Sra(s) => Some(s),
            LayerState::Softmax { .. } => None,
        }
    }

    fn input_row(params: &ModelParams<T>, token: usize, time: f64) -> Result<Vec<T>> {
        let cfg = &params.config;
        ensure!(token < cfg.vocab_size, "token {token} out of range for vocab {}", cfg.vocab_size);
        let mut h = params.embedding.row(token).to_vec();
        if cfg.positional == Positional::Absolute {
            let pe: Matrix<T> = absolute_encoding(&[time], cfg.d, &cfg.rope)?;
            add_into(&mut h, pe.data());
        }
        Ok(h)
    }

    /// Absorbs one observation and returns the next-token logits.
    pub fn absorb(&mut self, params: &ModelParams<T>, token: usize, time: f64) -> Result<Vec<T>> {
        let cfg = &params.config;
        ensure!(time.is_finite(), "non-finite timestamp");
        ensure!(time >= self.last_time, "time {time} precedes last observation {}", self.last_time);
        let eps = T::of(cfg.norm_eps);
        let hd = cfg.head_dim();
        let input = Self::input_row(params, token, time)?;
        let mut h = input.clone();
        for (lp, ls) in params.layers.iter().zip(self.layers.iter_mut()) {
            let x = rms_norm_row(&h, &lp.norm_attn, eps);
            let scale = lp.attn.query_scale();
            let q: Vec<T> = row_mul(&x, &lp.attn.w_q)?.into_iter().map(|v| v * scale).collect();
            let k = row_mul(&x, &lp.attn.w_k)?;
            let v = row_mul(&x, &lp.attn.w_v)?;
            let mut concat = Vec::with_capacity(cfg.d);
            match ls {
                LayerState::Sra(states) => {
                    for (head, st) in states.iter_mut().enumerate() {
                        let cols = head * hd..(head + 1) * hd;
                        let (qh, kh) = match &lp.attn.rope {
                            Some(rc) => {
                                (rope_rotate(&q[cols.clone()], time, rc)?, rope_rotate(&k[cols.clone()], time, rc)?)
                            }
                            None => (q[cols.clone()].to_vec(), k[cols.clone()].to_vec()),
                        };
                        let g = compute_gamma(&x, &lp.attn, head)?;
                        let (next, o) = recurrent_step(st, &qh, &kh, &v[cols], g, time)?;
                        *st = next;
                        concat.extend(o);
                    }
                }
                LayerState::Softmax { keys, values } => {
                    for head in 0..cfg.heads {
                        let cols = head * hd..(head + 1) * hd;
                        keys[head].push(k[cols.clone()].to_vec());
                        values[head].push(v[cols.clone()].to_vec());
                        let qh = &q[cols];
                        let mut p: Vec<T> = keys[head].iter().map(|km| dot(qh, km)).collect();
                        softmax_in_place(&mut p);
                        let mut o = vec![T::zero(); hd];
                        for (&pm, vm) in p.iter().zip(&values[head]) {
                            if pm == T::zero() {
                                continue;
                            }
                            for (oj, &vj) in o.iter_mut().zip(vm) {
                                *oj += pm * vj;
                            }
                        }
                        concat.extend(o);
                    }
                }
            }
            let a = row_mul(&concat, &lp.attn.w_o)?;
            add_into(&mut h, &a);
            feed_forward(lp, &mut h, eps)?;
        }
        let logits = head_logits(params, &h, eps)?;
        self.last_input = Some(input);
        self.last_logits = Some(logits.clone());
        self.last_time = time;
        self.len += 1;
        Ok(logits)
    }

    /// Logits at `t_target` without absorbing anything: every layer's state
    /// is carried across the gap and queried from the last observation's
    /// path, rotated to the target time.
    pub fn query(&self, params: &ModelParams<T>, t_target: f64, mode: GapMode) -> Result<Vec<T>> {
        let cfg = &params.config;
        ensure!(cfg.supports_time_specific(), "time-specific queries need SRA attention");
        let input =
            self.last_input.as_ref().ok_or_else(|| crate::Error::Contract("query on an empty history".into()))?;
        ensure!(t_target >= self.last_time, "target {t_target} precedes last observation {}", self.last_time);
        let eps = T::of(cfg.norm_eps);
        let mut h = input.clone();
        for (lp, ls) in params.layers.iter().zip(&self.layers) {
            let LayerState::Sra(states) = ls else { unreachable!("checked above") };
            let x = rms_norm_row(&h, &lp.norm_attn, eps);
            let mut concat = Vec::with_capacity(cfg.d);
            for (head, st) in states.iter().enumerate() {
                concat.extend(time_specific_output(st, &x, &lp.attn, head, t_target, mode)?);
            }
            let a = row_mul(&concat, &lp.attn.w_o)?;
            add_into(&mut h, &a);
            feed_forward(lp, &mut h, eps)?;
        }
        head_logits(params, &h, eps)
    }
}

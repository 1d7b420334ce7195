use super::attention::causal_softmax_tape;
use super::config::{Attention, ModelConfig, Positional};
use super::params::ModelParams;
use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Scalar, Tape, Var};
use crate::odebridge::GapMode;
use crate::positional::absolute_encoding;
use crate::sra::{sra_dual_tape, GapQueries, SraForm, SraVars};

/// Tape handles of one block.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub norm_attn: Var,
    pub attn: SraVars,
    pub norm_ff: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
}

/// Tape handles of all weights, plus the trainable ones in canonical order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embedding: Var,
    pub layers: Vec<LayerVars>,
    pub norm_final: Var,
    pub head: Option<Var>,
    pub head_bias: Var,
    pub trainable: Vec<Var>,
}

impl ModelVars {
    pub fn register<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> Self {
        let gate = params.config.has_gate_weights();
        let mut trainable = Vec::new();
        let mut leaf = |tape: &mut Tape<T>, m: &Matrix<T>, train: bool| {
            let v = tape.leaf(m.clone());
            if train {
                trainable.push(v);
            }
            v
        };
        let embedding = leaf(tape, &params.embedding, true);
        let mut layers = Vec::new();
        for l in &params.layers {
            let norm_attn = leaf(tape, &l.norm_attn, true);
            let w_q = leaf(tape, &l.attn.w_q, true);
            let w_k = leaf(tape, &l.attn.w_k, true);
            let w_v = leaf(tape, &l.attn.w_v, true);
            let w_o = leaf(tape, &l.attn.w_o, true);
            let w_gamma = leaf(tape, &l.attn.w_gamma, gate);
            let norm_ff = leaf(tape, &l.norm_ff, true);
            let ff_w1 = leaf(tape, &l.ff_w1, true);
            let ff_b1 = leaf(tape, &l.ff_b1, true);
            let ff_w2 = leaf(tape, &l.ff_w2, true);
            let ff_b2 = leaf(tape, &l.ff_b2, true);
            layers.push(LayerVars {
                norm_attn,
                attn: SraVars { w_q, w_k, w_v, w_o, w_gamma },
                norm_ff,
                ff_w1,
                ff_b1,
                ff_w2,
                ff_b2,
            });
        }
        let norm_final = leaf(tape, &params.norm_final, true);
        let head = params.head.as_ref().map(|h| leaf(tape, h, true));
        let head_bias = leaf(tape, &params.head_bias, true);
        ModelVars { embedding, layers, norm_final, head, head_bias, trainable }
    }
}

/// Nodes produced by a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `N × vocab` next-token logits.
    pub logits: Var,
    /// Logits of the gap-query stream, when requested.
    pub gap_logits: Option<Var>,
    /// Final normalized hidden rows, `N × d`.
    pub hidden: Var,
}

/// Checks a token/time sequence against a config.
pub fn check_sequence(cfg: &ModelConfig, tokens: &[usize], times: &[f64]) -> Result<()> {
    ensure!(!tokens.is_empty(), "empty sequence");
    ensure!(tokens.len() == times.len(), "{} tokens but {} timestamps", tokens.len(), times.len());
    ensure!(tokens.iter().all(|&t| t < cfg.vocab_size), "token id out of range for vocab {}", cfg.vocab_size);
    ensure!(times.iter().all(|t| t.is_finite()), "non-finite timestamp");
    ensure!(times.windows(2).all(|w| w[0] <= w[1]), "timestamps must be non-decreasing");
    Ok(())
}

/// Embedding rows of a sequence, with the absolute encoding added when the
/// config asks for it.
pub fn embed_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    tokens: &[usize],
    times: &[f64],
) -> Result<Var> {
    let x = tape.gather(vars.embedding, tokens)?;
    if cfg.positional == Positional::Absolute {
        let pe = tape.leaf(absolute_encoding(times, cfg.d, &cfg.rope)?);
        tape.add(x, pe)
    } else {
        Ok(x)
    }
}

/// Embedding lookup outside the tape.
pub fn embed<T: Scalar>(params: &ModelParams<T>, tokens: &[usize]) -> Result<Matrix<T>> {
    let v = params.config.vocab_size;
    ensure!(tokens.iter().all(|&t| t < v), "token id out of range for vocab {v}");
    let d = params.config.d;
    let mut data = Vec::with_capacity(tokens.len() * d);
    for &t in tokens {
        data.extend_from_slice(params.embedding.row(t));
    }
    Matrix::from_vec(tokens.len(), d, data)
}

fn feed_forward<T: Scalar>(tape: &mut Tape<T>, lv: &LayerVars, h: Var, eps: T) -> Result<Var> {
    let x = tape.rms_norm(h, lv.norm_ff, eps)?;
    let a = tape.matmul(x, lv.ff_w1)?;
    let a = tape.add_row(a, lv.ff_b1)?;
    let a = tape.gelu(a);
    let b = tape.matmul(a, lv.ff_w2)?;
    let b = tape.add_row(b, lv.ff_b2)?;
    tape.add(h, b)
}

fn softmax_block<T: Scalar>(tape: &mut Tape<T>, vars: &SraVars, cfg: &ModelConfig, x: Var, scale: T) -> Result<Var> {
    let hd = cfg.head_dim();
    let q = tape.matmul(x, vars.w_q)?;
    let q = tape.scale(q, scale);
    let k = tape.matmul(x, vars.w_k)?;
    let v = tape.matmul(x, vars.w_v)?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        heads.push(causal_softmax_tape(tape, qh, kh, vh)?);
    }
    let concat = tape.concat_cols(&heads)?;
    tape.matmul(concat, vars.w_o)
}

fn output_head<T: Scalar>(tape: &mut Tape<T>, vars: &ModelVars, h: Var, eps: T) -> Result<(Var, Var)> {
    let hidden = tape.rms_norm(h, vars.norm_final, eps)?;
    let logits = match vars.head {
        Some(w) => tape.matmul(hidden, w)?,
        None => tape.matmul_bt(hidden, vars.embedding)?,
    };
    Ok((tape.add_row(logits, vars.head_bias)?, hidden))
}

/// Full forward pass on a tape.
///
/// `gap` adds the gap-query stream: row `n` is queried at `targets[n]`
/// after carrying the state across the gap with the given mode.
pub fn forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    params: &ModelParams<T>,
    tokens: &[usize],
    times: &[f64],
    gap: Option<(&[f64], GapMode)>,
    form: SraForm,
) -> Result<ForwardVars> {
    let cfg = &params.config;
    check_sequence(cfg, tokens, times)?;
    ensure!(gap.is_none() || cfg.attention == Attention::Sra, "gap queries need SRA attention");
    let eps = T::of(cfg.norm_eps);
    let mut h = embed_tape(tape, vars, cfg, tokens, times)?;
    let mut hq = gap.map(|_| h);
    for (lp, lv) in params.layers.iter().zip(&vars.layers) {
        let x = tape.rms_norm(h, lv.norm_attn, eps)?;
        match cfg.attention {
            Attention::Sra => {
                let xq = match hq {
                    Some(hq) => Some(tape.rms_norm(hq, lv.norm_attn, eps)?),
                    None => None,
                };
                let gq = match (xq, gap) {
                    (Some(xq), Some((targets, mode))) => Some(GapQueries { x: xq, target_times: targets, mode }),
                    _ => None,
                };
                let (a, aq) = sra_dual_tape(tape, x, times, gq, &lv.attn, &lp.attn, form)?;
                h = tape.add(h, a)?;
                if let (Some(prev), Some(aq)) = (hq, aq) {
                    hq = Some(tape.add(prev, aq)?);
                }
            }
            Attention::SoftmaxGpt2 => {
                let a = softmax_block(tape, &lv.attn, cfg, x, lp.attn.query_scale())?;
                h = tape.add(h, a)?;
            }
        }
        h = feed_forward(tape, lv, h, eps)?;
        if let Some(prev) = hq {
            hq = Some(feed_forward(tape, lv, prev, eps)?);
        }
    }
    let (logits, hidden) = output_head(tape, vars, h, eps)?;
    let gap_logits = match hq {
        Some(hq) => Some(output_head(tape, vars, hq, eps)?.0),
        None => None,
    };
    Ok(ForwardVars { logits, gap_logits, hidden })
}

/// Next-token logits for every position, `N × vocab`.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    tokens: &[usize],
    times: &[f64],
    form: SraForm,
) -> Result<Matrix<T>> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params);
    let out = forward_tape(&mut tape, &vars, params, tokens, times, None, form)?;
    let logits = tape.value(out.logits).clone();
    crate::error::check_finite(&logits, "logits")?;
    Ok(logits)
}

/// Final normalized hidden rows, `N × d`.
pub fn hidden_states<T: Scalar>(params: &ModelParams<T>, tokens: &[usize], times: &[f64]) -> Result<Matrix<T>> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params);
    let out = forward_tape(&mut tape, &vars, params, tokens, times, None, SraForm::Recurrent)?;
    Ok(tape.value(out.hidden).clone())
}

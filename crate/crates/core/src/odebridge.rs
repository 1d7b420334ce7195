//! Continuous-time view of an SRA head.
//!
//! A head with gate `γ` is the zero-order-hold discretization of the linear
//! system `dS/dt = A S + B x` with diagonal `A = ln γ / Δ`. Lifting a step to
//! `(A, B, C)` and discretizing it again recovers the gate and key exactly,
//! which lets the state be carried across arbitrary real-valued gaps.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Scalar};
use crate::positional::rope_rotate;
use crate::sra::{SraParams, SraState};

/// How a state is carried across an observation-free gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Only the history before the latest observation decays; the latest
    /// `kᵀv` enters undecayed.
    #[default]
    HistoryOnly,
    /// The whole state decays.
    Full,
}

impl std::fmt::Display for GapMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GapMode::HistoryOnly => "history_only",
            GapMode::Full => "full",
        })
    }
}

impl std::str::FromStr for GapMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "history_only" => Ok(GapMode::HistoryOnly),
            "full" => Ok(GapMode::Full),
            other => Err(crate::Error::Contract(format!("unknown gap mode {other:?} (expected history_only or full)"))),
        }
    }
}

/// Continuous parameters of one lifted step.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousParams<T> {
    /// Diagonal of `A`, all entries ≤ 0.
    pub a: Vec<T>,
    /// Input matrix, the lifted key column (`head_dim × 1`).
    pub b: Matrix<T>,
    /// Output row, the query.
    pub c: Vec<T>,
    pub delta: T,
}

/// Lifts a discrete step with gate `gamma` and step size `delta`.
pub fn zoh_lift<T: Scalar>(gamma: T, k_row: &[T], q_row: &[T], delta: T) -> Result<ContinuousParams<T>> {
    ensure!(gamma > T::zero() && gamma <= T::one(), "zoh_lift: gamma {gamma} outside (0, 1]");
    ensure!(delta > T::zero() && delta.is_finite(), "zoh_lift: delta must be positive, got {delta}");
    ensure!(k_row.len() == q_row.len(), "zoh_lift: key and query lengths differ");
    let a = gamma.ln() / delta;
    // B = A (e^{ΔA} − 1)^{-1} kᵀ, with the A → 0 limit kᵀ/Δ
    let factor = if a == T::zero() { delta.recip() } else { a / (delta * a).exp_m1() };
    let b = k_row.iter().map(|&k| factor * k).collect();
    Ok(ContinuousParams { a: vec![a; k_row.len()], b: Matrix::from_parts(k_row.len(), 1, b), c: q_row.to_vec(), delta })
}

/// Zero-order-hold discretization, returning `(Ā diagonal, B̄)`.
pub fn zoh_discretize<T: Scalar>(cp: &ContinuousParams<T>) -> (Vec<T>, Matrix<T>) {
    let dt = cp.delta;
    let a_bar = cp.a.iter().map(|&a| (dt * a).exp()).collect();
    let mut b_bar = cp.b.clone();
    for (i, &a) in cp.a.iter().enumerate() {
        let factor = if a == T::zero() { dt } else { (dt * a).exp_m1() / a };
        for v in b_bar.row_mut(i) {
            *v *= factor;
        }
    }
    (a_bar, b_bar)
}

/// Carries `state` forward by `dt` with decay `gamma^dt`.
pub fn gap_decay<T: Scalar>(state: &SraState<T>, gamma: T, dt: f64, mode: GapMode) -> Result<SraState<T>> {
    ensure!(dt >= 0.0 && dt.is_finite(), "gap_decay: dt must be finite and ≥ 0, got {dt}");
    ensure!(gamma > T::zero() && gamma <= T::one(), "gap_decay: gamma {gamma} outside (0, 1]");
    let mut out = state.clone();
    if dt == 0.0 {
        return Ok(out);
    }
    let f = (T::of(dt) * gamma.ln()).exp();
    match mode {
        GapMode::Full => {
            for v in out.s.data_mut() {
                *v *= f;
            }
        }
        GapMode::HistoryOnly => {
            for (v, &kv) in out.s.data_mut().iter_mut().zip(state.last_kv.data()) {
                *v = f * (*v - kv) + kv;
            }
        }
    }
    out.last_time = if state.last_time.is_finite() { state.last_time + dt } else { state.last_time };
    Ok(out)
}

/// Query of `head` built from a hidden row and rotated to `time`.
pub fn head_query<T: Scalar>(x_row: &[T], params: &SraParams<T>, head: usize, time: f64) -> Result<Vec<T>> {
    ensure!(x_row.len() == params.width(), "hidden row has {} entries, width is {}", x_row.len(), params.width());
    ensure!(head < params.heads, "head {head} out of range");
    let hd = params.head_dim();
    let scale = params.query_scale();
    let q: Vec<T> = (h_cols(head, hd))
        .map(|c| x_row.iter().enumerate().fold(T::zero(), |acc, (r, &x)| acc + x * params.w_q.get(r, c)) * scale)
        .collect();
    match &params.rope {
        Some(cfg) => rope_rotate(&q, time, cfg),
        None => Ok(q),
    }
}

fn h_cols(head: usize, hd: usize) -> std::ops::Range<usize> {
    head * hd..(head + 1) * hd
}

/// Output of one head at `t_target`, read from the gap-carried state.
pub fn time_specific_output<T: Scalar>(
    state: &SraState<T>,
    last_x_row: &[T],
    params: &SraParams<T>,
    head: usize,
    t_target: f64,
    mode: GapMode,
) -> Result<Vec<T>> {
    ensure!(
        t_target >= state.last_time,
        "time_specific_output: target {t_target} precedes last observation {}",
        state.last_time
    );
    let q = head_query(last_x_row, params, head, t_target)?;
    let dt = if state.last_time.is_finite() { t_target - state.last_time } else { 0.0 };
    let carried = gap_decay(state, state.last_gamma, dt, mode)?;
    Ok(carried.read(&q))
}

/// All heads at `t_target`, concatenated and mixed by `W_O`.
pub fn time_specific_module_output<T: Scalar>(
    states: &[SraState<T>],
    last_x_row: &[T],
    params: &SraParams<T>,
    t_target: f64,
    mode: GapMode,
) -> Result<Vec<T>> {
    ensure!(states.len() == params.heads, "{} states for {} heads", states.len(), params.heads);
    let mut concat = Vec::with_capacity(params.width());
    for (h, st) in states.iter().enumerate() {
        concat.extend(time_specific_output(st, last_x_row, params, h, t_target, mode)?);
    }
    Ok(Matrix::row_vector(&concat).matmul(&params.w_o)?.into_data())
}

/// Runs one head as the discrete SSM obtained by lifting every step with
/// step size `deltas[n]` and discretizing it again.
///
/// `q`, `k`, `v` are `N × hd`; `gammas` and `deltas` have length `N`.
pub fn ssm_unroll<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    gammas: &[T],
    deltas: &[T],
) -> Result<Matrix<T>> {
    let (n, hd) = q.shape();
    ensure!(k.shape() == (n, hd) && v.shape() == (n, hd), "ssm_unroll: q, k, v shapes differ");
    ensure!(gammas.len() == n && deltas.len() == n, "ssm_unroll: need {n} gates and step sizes");
    let mut s = Matrix::zeros(hd, hd);
    let mut out = Matrix::zeros(n, hd);
    for t in 0..n {
        let cp = zoh_lift(gammas[t], k.row(t), q.row(t), deltas[t])?;
        let (a_bar, b_bar) = zoh_discretize(&cp);
        for i in 0..hd {
            let bi = b_bar.get(i, 0);
            for (sv, &vj) in s.row_mut(i).iter_mut().zip(v.row(t)) {
                *sv = a_bar[i] * *sv + bi * vj;
            }
        }
        let o = out.row_mut(t);
        for (i, &ci) in cp.c.iter().enumerate() {
            for (oj, &sv) in o.iter_mut().zip(s.row(i)) {
                *oj += ci * sv;
            }
        }
    }
    Ok(out)
}

//! Selective recurrent attention.
//!
//! Each head keeps a `head_dim × head_dim` state that is decayed by a
//! per-token gate and updated with the key/value outer product:
//!
//! ```text
//! S_n = γ_n S_{n−1} + k_nᵀ v_n        o_n = q_n S_n
//! γ_n = σ(x_n · w_γ)^{1/τ}
//! ```
//!
//! Unrolling the recurrence gives the parallel form `O = (QKᵀ ⊙ D) V` with
//! the causal decay matrix `D_nm = Π_{t=m+1..n} γ_t`. Both forms are provided
//! as plain numeric passes and as differentiable tape passes.

mod decay;
mod tape;

use serde::{Deserialize, Serialize};

pub use decay::{build_decay_matrix, DecaySchedule};
pub use tape::{
    decay_matrix_tape, dual_scan_tape, gapped_decay_tape, recurrent_scan_tape, sra_dual_tape, sra_tape, GapQueries,
    SraVars,
};

use crate::error::{ensure, Result};
use crate::numerics::{dot, sigmoid_pow, Matrix, Scalar};
use crate::positional::{rope_apply, RopeConfig};

/// Default decay temperature.
pub const DEFAULT_TAU: f64 = 20.0;

/// How the per-token decay is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// `γ = σ(x · w_γ)^{1/τ}`.
    Data,
    /// The same `γ` for every token and head.
    Fixed(f64),
}

/// Which of the two equivalent evaluation orders to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SraForm {
    Recurrent,
    Parallel,
}

/// Weights and hyper-parameters of one multi-head SRA module.
#[derive(Debug, Clone, PartialEq)]
pub struct SraParams<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    /// Mixes the concatenated head outputs.
    pub w_o: Matrix<T>,
    /// `heads × d`; row `h` is the decay vector of head `h`.
    pub w_gamma: Matrix<T>,
    pub tau: f64,
    pub heads: usize,
    /// `None` disables rotary encoding (the absolute-position ablation).
    pub rope: Option<RopeConfig>,
    pub gate: GateMode,
}

impl<T: Scalar> SraParams<T> {
    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.width() / self.heads
    }

    /// Query scaling `1/√head_dim`, applied before the scores are formed.
    pub fn query_scale(&self) -> T {
        T::of(1.0 / (self.head_dim() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        ensure!(self.heads > 0 && d.is_multiple_of(self.heads), "width {d} not divisible by {} heads", self.heads);
        for (name, m) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v), ("w_o", &self.w_o)] {
            ensure!(m.shape() == (d, d), "{name} must be {d}x{d}, got {:?}", m.shape());
        }
        ensure!(
            self.w_gamma.shape() == (self.heads, d),
            "w_gamma must be {}x{d}, got {:?}",
            self.heads,
            self.w_gamma.shape()
        );
        ensure!(self.tau > 0.0, "tau must be positive, got {}", self.tau);
        if let GateMode::Fixed(g) = self.gate {
            ensure!(g > 0.0 && g <= 1.0, "fixed gamma must lie in (0, 1], got {g}");
        }
        if let Some(rope) = &self.rope {
            rope.validate()?;
            ensure!(
                rope.head_dim == self.head_dim(),
                "rope head_dim {} != head_dim {}",
                rope.head_dim,
                self.head_dim()
            );
        }
        Ok(())
    }

    /// Projects rows to rotated, scaled queries plus rotated keys and values.
    pub fn project(&self, x_rows: &Matrix<T>, times: &[f64]) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        let q = x_rows.matmul(&self.w_q)?.scale(self.query_scale());
        let k = x_rows.matmul(&self.w_k)?;
        let v = x_rows.matmul(&self.w_v)?;
        let (q, k) = match &self.rope {
            Some(cfg) => rope_apply(&q, &k, times, cfg)?,
            None => (q, k),
        };
        Ok((q, k, v))
    }

    /// Decay of every token for every head, `N × heads`.
    pub fn gammas(&self, x_rows: &Matrix<T>) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(x_rows.rows(), self.heads);
        for n in 0..x_rows.rows() {
            for h in 0..self.heads {
                out.set(n, h, compute_gamma(x_rows.row(n), self, h)?);
            }
        }
        Ok(out)
    }
}

/// Decay gate of one head for one token, in `(0, 1]`.
pub fn compute_gamma<T: Scalar>(x_row: &[T], params: &SraParams<T>, head: usize) -> Result<T> {
    ensure!(
        x_row.len() == params.width(),
        "compute_gamma: row has {} entries, width is {}",
        x_row.len(),
        params.width()
    );
    ensure!(head < params.heads, "head {head} out of range");
    Ok(match params.gate {
        GateMode::Fixed(g) => T::of(g),
        GateMode::Data => sigmoid_pow(dot(x_row, params.w_gamma.row(head)), T::of(params.tau)),
    })
}

/// Recurrent carrier of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct SraState<T> {
    pub s: Matrix<T>,
    /// Timestamp of the most recently absorbed observation.
    pub last_time: f64,
    /// `kᵀv` of the most recently absorbed observation.
    pub last_kv: Matrix<T>,
    pub last_gamma: T,
}

impl<T: Scalar> SraState<T> {
    /// Empty history, `S_0 = 0`.
    pub fn new(head_dim: usize) -> Self {
        SraState {
            s: Matrix::zeros(head_dim, head_dim),
            last_time: f64::NEG_INFINITY,
            last_kv: Matrix::zeros(head_dim, head_dim),
            last_gamma: T::one(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.s.rows()
    }

    /// `q · S`.
    pub fn read(&self, q: &[T]) -> Vec<T> {
        let hd = self.head_dim();
        let mut out = vec![T::zero(); hd];
        for (i, &qi) in q.iter().enumerate() {
            for (o, &sv) in out.iter_mut().zip(self.s.row(i)) {
                *o += qi * sv;
            }
        }
        out
    }
}

/// One recurrence step: `S ← γS + kᵀv`, `o = qS`.
pub fn recurrent_step<T: Scalar>(
    state: &SraState<T>,
    q: &[T],
    k: &[T],
    v: &[T],
    gamma: T,
    time: f64,
) -> Result<(SraState<T>, Vec<T>)> {
    let hd = state.head_dim();
    ensure!(q.len() == hd && k.len() == hd && v.len() == hd, "recurrent_step: vectors must have head_dim {hd}");
    ensure!(gamma > T::zero() && gamma <= T::one(), "recurrent_step: gamma {gamma} outside (0, 1]");
    ensure!(q.iter().chain(k).chain(v).all(|x| x.is_finite()), "recurrent_step: non-finite input");
    ensure!(time >= state.last_time, "recurrent_step: time {time} precedes last update {}", state.last_time);
    let mut kv = Matrix::zeros(hd, hd);
    for i in 0..hd {
        for (o, &vj) in kv.row_mut(i).iter_mut().zip(v) {
            *o = k[i] * vj;
        }
    }
    let mut s = state.s.clone();
    for (sv, &kvv) in s.data_mut().iter_mut().zip(kv.data()) {
        *sv = gamma * *sv + kvv;
    }
    let next = SraState { s, last_time: time, last_kv: kv, last_gamma: gamma };
    let out = next.read(q);
    Ok((next, out))
}

fn check_sequence<T: Scalar>(x_rows: &Matrix<T>, times: &[f64], params: &SraParams<T>) -> Result<()> {
    params.validate()?;
    ensure!(x_rows.rows() > 0, "empty sequence");
    ensure!(x_rows.rows() == times.len(), "{} rows but {} timestamps", x_rows.rows(), times.len());
    ensure!(x_rows.cols() == params.width(), "rows have width {}, module expects {}", x_rows.cols(), params.width());
    Ok(())
}

/// Recurrent pass that also returns the final state of every head.
pub fn recurrent_forward_with_states<T: Scalar>(
    x_rows: &Matrix<T>,
    times: &[f64],
    params: &SraParams<T>,
) -> Result<(Matrix<T>, Vec<SraState<T>>)> {
    check_sequence(x_rows, times, params)?;
    let (q, k, v) = params.project(x_rows, times)?;
    let gammas = params.gammas(x_rows)?;
    let hd = params.head_dim();
    let n = x_rows.rows();
    let mut concat = Matrix::zeros(n, params.width());
    let mut finals = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let cols = h * hd..(h + 1) * hd;
        let mut state = SraState::new(hd);
        for t in 0..n {
            let (next, o) = recurrent_step(
                &state,
                &q.row(t)[cols.clone()],
                &k.row(t)[cols.clone()],
                &v.row(t)[cols.clone()],
                gammas.get(t, h),
                times[t],
            )?;
            concat.row_mut(t)[cols.clone()].copy_from_slice(&o);
            state = next;
        }
        finals.push(state);
    }
    Ok((concat.matmul(&params.w_o)?, finals))
}

/// Recurrent form over a whole sequence, heads concatenated and mixed.
pub fn recurrent_forward<T: Scalar>(x_rows: &Matrix<T>, times: &[f64], params: &SraParams<T>) -> Result<Matrix<T>> {
    recurrent_forward_with_states(x_rows, times, params).map(|(o, _)| o)
}

/// Parallel form per head, before the output projection.
pub fn parallel_head_outputs<T: Scalar>(
    x_rows: &Matrix<T>,
    times: &[f64],
    params: &SraParams<T>,
) -> Result<Vec<Matrix<T>>> {
    check_sequence(x_rows, times, params)?;
    let (q, k, v) = params.project(x_rows, times)?;
    let gammas = params.gammas(x_rows)?;
    let hd = params.head_dim();
    (0..params.heads)
        .map(|h| {
            let (qh, kh, vh) = (q.slice_cols(h * hd, hd), k.slice_cols(h * hd, hd), v.slice_cols(h * hd, hd));
            let schedule = DecaySchedule::from_gammas(gammas.slice_cols(h, 1).into_data())?;
            let d = build_decay_matrix(&schedule);
            qh.matmul_t(&kh)?.hadamard(&d)?.matmul(&vh)
        })
        .collect()
}

/// Parallel form `((QKᵀ) ⊙ D) V` per head, concatenated and mixed by `W_O`.
pub fn parallel_forward<T: Scalar>(x_rows: &Matrix<T>, times: &[f64], params: &SraParams<T>) -> Result<Matrix<T>> {
    let heads = parallel_head_outputs(x_rows, times, params)?;
    Matrix::concat_cols(&heads)?.matmul(&params.w_o)
}

/// Multi-head SRA: independent heads with their own decay vectors, linearly
/// mixed after concatenation.
pub fn multi_head_forward<T: Scalar>(x_rows: &Matrix<T>, times: &[f64], params: &SraParams<T>) -> Result<Matrix<T>> {
    parallel_forward(x_rows, times, params)
}

/// Either form, selected at run time.
pub fn sra_forward<T: Scalar>(
    x_rows: &Matrix<T>,
    times: &[f64],
    params: &SraParams<T>,
    form: SraForm,
) -> Result<Matrix<T>> {
    match form {
        SraForm::Recurrent => recurrent_forward(x_rows, times, params),
        SraForm::Parallel => parallel_forward(x_rows, times, params),
    }
}

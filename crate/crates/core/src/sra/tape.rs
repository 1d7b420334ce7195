//! Differentiable SRA passes.

use super::{GateMode, SraForm, SraParams};
use crate::error::{ensure, Result};
use crate::numerics::{CustomOp, Matrix, Scalar, Tape, Var};
use crate::odebridge::GapMode;
use crate::positional::{rope_tape, RopeConfig};

/// Tape handles of one SRA module's weights.
#[derive(Debug, Clone, Copy)]
pub struct SraVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub w_gamma: Var,
}

impl SraVars {
    /// Registers the weights of `params` as leaves.
    pub fn register<T: Scalar>(tape: &mut Tape<T>, params: &SraParams<T>) -> Self {
        SraVars {
            w_q: tape.leaf(params.w_q.clone()),
            w_k: tape.leaf(params.w_k.clone()),
            w_v: tape.leaf(params.w_v.clone()),
            w_o: tape.leaf(params.w_o.clone()),
            w_gamma: tape.leaf(params.w_gamma.clone()),
        }
    }
}

/// Full multi-head SRA on the tape. Hyper-parameters are read from `params`;
/// weights come from `vars`.
pub fn sra_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    times: &[f64],
    vars: &SraVars,
    params: &SraParams<T>,
    form: SraForm,
) -> Result<Var> {
    sra_dual_tape(tape, x, times, None, vars, params, form).map(|(o, _)| o)
}

/// A second query stream that reads every state after carrying it across the
/// gap to the next target time.
///
/// Row `n` of `x` supplies the query for target time `target_times[n]`; the
/// state it reads is the one after token `n`, decayed over
/// `target_times[n] − times[n]` with the gate of token `n`.
#[derive(Debug, Clone, Copy)]
pub struct GapQueries<'a> {
    pub x: Var,
    pub target_times: &'a [f64],
    pub mode: GapMode,
}

/// [`sra_tape`] with an optional gap-query stream. Returns the ordinary
/// output and, when requested, the gap-query output.
pub fn sra_dual_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    times: &[f64],
    gap: Option<GapQueries<'_>>,
    vars: &SraVars,
    params: &SraParams<T>,
    form: SraForm,
) -> Result<(Var, Option<Var>)> {
    params.validate()?;
    let n = tape.value(x).rows();
    ensure!(n > 0, "empty sequence");
    ensure!(n == times.len(), "{n} rows but {} timestamps", times.len());
    let hd = params.head_dim();

    let q = tape.matmul(x, vars.w_q)?;
    let q = tape.scale(q, params.query_scale());
    let k = tape.matmul(x, vars.w_k)?;
    let v = tape.matmul(x, vars.w_v)?;
    let (q, k) = match &params.rope {
        Some(cfg) => rotate_pair(tape, q, k, times, cfg)?,
        None => (q, k),
    };
    let gammas = match params.gate {
        GateMode::Data => {
            let z = tape.matmul_bt(x, vars.w_gamma)?;
            tape.gate(z, T::of(params.tau))
        }
        GateMode::Fixed(g) => tape.leaf(Matrix::filled(n, params.heads, T::of(g))),
    };

    let gap_side = match gap {
        None => None,
        Some(g) => {
            ensure!(tape.value(g.x).shape() == tape.value(x).shape(), "gap queries must match the input shape");
            ensure!(g.target_times.len() == n, "{} target times for {n} rows", g.target_times.len());
            let gaps: Vec<f64> = g.target_times.iter().zip(times).map(|(&a, &b)| a - b).collect();
            ensure!(gaps.iter().all(|&d| d >= 0.0 && d.is_finite()), "target times must not precede their rows");
            let q2 = tape.matmul(g.x, vars.w_q)?;
            let q2 = tape.scale(q2, params.query_scale());
            let q2 = match &params.rope {
                Some(cfg) => rope_tape(tape, q2, g.target_times, cfg)?,
                None => q2,
            };
            Some((q2, gaps, g.mode))
        }
    };

    let mut heads = Vec::with_capacity(params.heads);
    let mut gap_heads = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        let gh = tape.slice_cols(gammas, h, 1)?;
        let q2h = match &gap_side {
            Some((q2, _, _)) => Some(tape.slice_cols(*q2, h * hd, hd)?),
            None => None,
        };
        match form {
            SraForm::Recurrent => match (&gap_side, q2h) {
                (Some((_, gaps, mode)), Some(q2h)) => {
                    let both = dual_scan_tape(tape, qh, kh, vh, gh, q2h, gaps, *mode)?;
                    heads.push(tape.slice_cols(both, 0, hd)?);
                    gap_heads.push(tape.slice_cols(both, hd, hd)?);
                }
                _ => heads.push(recurrent_scan_tape(tape, qh, kh, vh, gh)?),
            },
            SraForm::Parallel => {
                let scores = tape.matmul_bt(qh, kh)?;
                let d = decay_matrix_tape(tape, gh)?;
                let masked = tape.hadamard(scores, d)?;
                heads.push(tape.matmul(masked, vh)?);
                if let (Some((_, gaps, mode)), Some(q2h)) = (&gap_side, q2h) {
                    let scores = tape.matmul_bt(q2h, kh)?;
                    let d = gapped_decay_tape(tape, gh, gaps, *mode)?;
                    let masked = tape.hadamard(scores, d)?;
                    gap_heads.push(tape.matmul(masked, vh)?);
                }
            }
        }
    }
    let concat = tape.concat_cols(&heads)?;
    let out = tape.matmul(concat, vars.w_o)?;
    let gap_out = if gap_heads.is_empty() {
        None
    } else {
        let concat = tape.concat_cols(&gap_heads)?;
        Some(tape.matmul(concat, vars.w_o)?)
    };
    Ok((out, gap_out))
}

fn rotate_pair<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, times: &[f64], cfg: &RopeConfig) -> Result<(Var, Var)> {
    Ok((rope_tape(tape, q, times, cfg)?, rope_tape(tape, k, times, cfg)?))
}

/// Decay matrix of an `N × 1` column of gates, differentiable in the gates.
pub fn decay_matrix_tape<T: Scalar>(tape: &mut Tape<T>, gammas: Var) -> Result<Var> {
    let g = tape.value(gammas);
    ensure!(g.cols() == 1, "decay gates must be a column, got {:?}", g.shape());
    let schedule = super::DecaySchedule::from_gammas(g.data().to_vec())?;
    let d = super::build_decay_matrix(&schedule);
    Ok(tape.custom(&[gammas], d, Box::new(DecayOp)))
}

struct DecayOp;

impl<T: Scalar> CustomOp<T> for DecayOp {
    fn name(&self) -> &'static str {
        "decay_matrix"
    }

    // ∂D[n][m]/∂γ_t = D[n][m]/γ_t for m < t ≤ n. For every row the prefix
    // sums over m < t are accumulated once, which keeps the sweep O(N²).
    fn backward(&self, inputs: &[&Matrix<T>], output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let g = inputs[0];
        let n = g.rows();
        let mut acc = vec![T::zero(); n];
        for r in 1..n {
            let (gr, dr) = (grad.row(r), output.row(r));
            let mut prefix = T::zero();
            for t in 1..=r {
                prefix += gr[t - 1] * dr[t - 1];
                acc[t] += prefix;
            }
        }
        let dg = acc.iter().zip(g.data()).map(|(&a, &gt)| a / gt).collect();
        vec![Some(Matrix::from_parts(n, 1, dg))]
    }
}

/// Linear-time recurrent scan of one head on the tape.
///
/// Inputs are `q, k, v` (`N × hd`) and the gate column `γ` (`N × 1`). The
/// per-step states are kept for the reverse sweep.
pub fn recurrent_scan_tape<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, gammas: Var) -> Result<Var> {
    let (qm, km, vm, gm) = (tape.value(q), tape.value(k), tape.value(v), tape.value(gammas));
    let (n, hd) = qm.shape();
    ensure!(km.shape() == (n, hd) && vm.shape() == (n, hd), "scan: q, k, v shapes differ");
    ensure!(gm.shape() == (n, 1), "scan: gates must be {n}x1, got {:?}", gm.shape());
    ensure!(gm.data().iter().all(|&g| g > T::zero() && g <= T::one()), "scan: gate outside (0, 1]");
    let mut states = vec![T::zero(); n * hd * hd];
    let mut s = vec![T::zero(); hd * hd];
    let mut out = Matrix::zeros(n, hd);
    for t in 0..n {
        let (qt, kt, vt, g) = (qm.row(t), km.row(t), vm.row(t), gm.get(t, 0));
        for i in 0..hd {
            let row = &mut s[i * hd..(i + 1) * hd];
            for (sv, &vj) in row.iter_mut().zip(vt) {
                *sv = g * *sv + kt[i] * vj;
            }
        }
        let o = out.row_mut(t);
        for i in 0..hd {
            let qi = qt[i];
            for (oj, &sv) in o.iter_mut().zip(&s[i * hd..(i + 1) * hd]) {
                *oj += qi * sv;
            }
        }
        states[t * hd * hd..(t + 1) * hd * hd].copy_from_slice(&s);
    }
    ensure!(out.is_finite(), "scan produced non-finite output");
    Ok(tape.custom(&[q, k, v, gammas], out, Box::new(ScanOp { states, hd })))
}

struct ScanOp<T> {
    states: Vec<T>,
    hd: usize,
}

impl<T: Scalar> CustomOp<T> for ScanOp<T> {
    fn name(&self) -> &'static str {
        "recurrent_scan"
    }

    fn backward(&self, inputs: &[&Matrix<T>], _output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let (q, k, v, gm) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let (n, hd) = (q.rows(), self.hd);
        let sz = hd * hd;
        let (mut dq, mut dk, mut dv) = (Matrix::zeros(n, hd), Matrix::zeros(n, hd), Matrix::zeros(n, hd));
        let mut dg = Matrix::zeros(n, 1);
        // adjoint of S_t accumulated from later steps
        let mut adj = vec![T::zero(); sz];
        for t in (0..n).rev() {
            let s = &self.states[t * sz..(t + 1) * sz];
            let (qt, kt, vt, dot) = (q.row(t), k.row(t), v.row(t), grad.row(t));
            {
                let dqt = dq.row_mut(t);
                for i in 0..hd {
                    dqt[i] = s[i * hd..(i + 1) * hd].iter().zip(dot).fold(T::zero(), |a, (&x, &y)| a + x * y);
                }
            }
            for i in 0..hd {
                for (a, &dj) in adj[i * hd..(i + 1) * hd].iter_mut().zip(dot) {
                    *a += qt[i] * dj;
                }
            }
            {
                let dkt = dk.row_mut(t);
                for i in 0..hd {
                    dkt[i] = adj[i * hd..(i + 1) * hd].iter().zip(vt).fold(T::zero(), |a, (&x, &y)| a + x * y);
                }
            }
            {
                let dvt = dv.row_mut(t);
                for i in 0..hd {
                    let ki = kt[i];
                    for (o, &a) in dvt.iter_mut().zip(&adj[i * hd..(i + 1) * hd]) {
                        *o += ki * a;
                    }
                }
            }
            if t > 0 {
                let prev = &self.states[(t - 1) * sz..t * sz];
                dg.set(t, 0, adj.iter().zip(prev).fold(T::zero(), |a, (&x, &y)| a + x * y));
            }
            let g = gm.get(t, 0);
            for a in adj.iter_mut() {
                *a *= g;
            }
        }
        vec![Some(dq), Some(dk), Some(dv), Some(dg)]
    }
}

/// `γ^dt`, computed the same way as the inference-time gap carry.
pub(crate) fn gap_factor<T: Scalar>(gamma: T, dt: f64) -> T {
    if dt == 0.0 {
        T::one()
    } else {
        (T::of(dt) * gamma.ln()).exp()
    }
}

/// Decay matrix for gap queries: row `n` is the ordinary decay row scaled by
/// `f_n = γ_n^{gap_n}`, except that in history-only mode the diagonal (the
/// newest observation) stays 1.
pub fn gapped_decay_tape<T: Scalar>(tape: &mut Tape<T>, gammas: Var, gaps: &[f64], mode: GapMode) -> Result<Var> {
    let g = tape.value(gammas);
    ensure!(g.cols() == 1 && g.rows() == gaps.len(), "gapped decay: {:?} gates for {} gaps", g.shape(), gaps.len());
    let schedule = super::DecaySchedule::from_gammas(g.data().to_vec())?;
    let mut d = super::build_decay_matrix(&schedule);
    let n = gaps.len();
    for r in 0..n {
        let f = gap_factor(g.get(r, 0), gaps[r]);
        let row = d.row_mut(r);
        for v in &mut row[..r] {
            *v *= f;
        }
        if mode == GapMode::Full {
            row[r] *= f;
        }
    }
    Ok(tape.custom(&[gammas], d, Box::new(GappedDecayOp { gaps: gaps.to_vec(), mode })))
}

struct GappedDecayOp {
    gaps: Vec<f64>,
    mode: GapMode,
}

impl<T: Scalar> CustomOp<T> for GappedDecayOp {
    fn name(&self) -> &'static str {
        "gapped_decay_matrix"
    }

    fn backward(&self, inputs: &[&Matrix<T>], output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let g = inputs[0];
        let n = g.rows();
        let mut acc = vec![T::zero(); n];
        for r in 0..n {
            let (gr, dr) = (grad.row(r), output.row(r));
            let mut prefix = T::zero();
            for t in 1..=r {
                prefix += gr[t - 1] * dr[t - 1];
                acc[t] += prefix;
            }
            // row r also depends on γ_r through its gap factor
            let own = match self.mode {
                GapMode::HistoryOnly => prefix,
                GapMode::Full => prefix + gr[r] * dr[r],
            };
            acc[r] += T::of(self.gaps[r]) * own;
        }
        let dg = acc.iter().zip(g.data()).map(|(&a, &gt)| a / gt).collect();
        vec![Some(Matrix::from_parts(n, 1, dg))]
    }
}

/// Recurrent scan with a gap-query stream. Output is `[o | o_gap]`,
/// `N × 2hd`.
#[allow(clippy::too_many_arguments)]
pub fn dual_scan_tape<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    gammas: Var,
    q_gap: Var,
    gaps: &[f64],
    mode: GapMode,
) -> Result<Var> {
    let (qm, km, vm, gm, q2) = (tape.value(q), tape.value(k), tape.value(v), tape.value(gammas), tape.value(q_gap));
    let (n, hd) = qm.shape();
    ensure!(
        km.shape() == (n, hd) && vm.shape() == (n, hd) && q2.shape() == (n, hd),
        "dual scan: q, k, v, q_gap shapes differ"
    );
    ensure!(gm.shape() == (n, 1) && gaps.len() == n, "dual scan: need {n} gates and gaps");
    ensure!(gm.data().iter().all(|&g| g > T::zero() && g <= T::one()), "dual scan: gate outside (0, 1]");
    let sz = hd * hd;
    let mut states = vec![T::zero(); n * sz];
    let mut s = vec![T::zero(); sz];
    let mut m = vec![T::zero(); sz];
    let mut out = Matrix::zeros(n, 2 * hd);
    for t in 0..n {
        let (qt, kt, vt, g) = (qm.row(t), km.row(t), vm.row(t), gm.get(t, 0));
        for i in 0..hd {
            for (sv, &vj) in s[i * hd..(i + 1) * hd].iter_mut().zip(vt) {
                *sv = g * *sv + kt[i] * vj;
            }
        }
        let f = gap_factor(g, gaps[t]);
        for i in 0..hd {
            for j in 0..hd {
                let kv = kt[i] * vt[j];
                m[i * hd + j] = match mode {
                    GapMode::Full => f * s[i * hd + j],
                    GapMode::HistoryOnly => f * (s[i * hd + j] - kv) + kv,
                };
            }
        }
        let q2t = q2.row(t);
        let row = out.row_mut(t);
        for i in 0..hd {
            for j in 0..hd {
                row[j] += qt[i] * s[i * hd + j];
                row[hd + j] += q2t[i] * m[i * hd + j];
            }
        }
        states[t * sz..(t + 1) * sz].copy_from_slice(&s);
    }
    ensure!(out.is_finite(), "dual scan produced non-finite output");
    Ok(tape.custom(&[q, k, v, gammas, q_gap], out, Box::new(DualScanOp { states, hd, gaps: gaps.to_vec(), mode })))
}

struct DualScanOp<T> {
    states: Vec<T>,
    hd: usize,
    gaps: Vec<f64>,
    mode: GapMode,
}

impl<T: Scalar> CustomOp<T> for DualScanOp<T> {
    fn name(&self) -> &'static str {
        "dual_recurrent_scan"
    }

    // With M_t = f_t S_t + c_t k_tᵀv_t (c = 1 − f for history-only, 0 for
    // full) and o'_t = q'_t M_t, the adjoint of S_t picks up f_t q'ᵀdo'
    // and the key/value outer product picks up c_t q'ᵀdo' as well.
    fn backward(&self, inputs: &[&Matrix<T>], _output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let (q, k, v, gm, q2) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
        let (n, hd) = (q.rows(), self.hd);
        let sz = hd * hd;
        let (mut dq, mut dk, mut dv, mut dq2) =
            (Matrix::zeros(n, hd), Matrix::zeros(n, hd), Matrix::zeros(n, hd), Matrix::zeros(n, hd));
        let mut dg = Matrix::zeros(n, 1);
        let mut adj = vec![T::zero(); sz];
        let mut gm_adj = vec![T::zero(); sz];
        let mut kv_adj = vec![T::zero(); sz];
        for t in (0..n).rev() {
            let s = &self.states[t * sz..(t + 1) * sz];
            let (qt, kt, vt, q2t) = (q.row(t), k.row(t), v.row(t), q2.row(t));
            let (dot, dot2) = (&grad.row(t)[..hd], &grad.row(t)[hd..]);
            let g = gm.get(t, 0);
            let f = gap_factor(g, self.gaps[t]);
            let c = match self.mode {
                GapMode::Full => T::zero(),
                GapMode::HistoryOnly => T::one() - f,
            };
            // adjoint of M_t and the query gradients
            for i in 0..hd {
                let mut acc = T::zero();
                let mut acc2 = T::zero();
                for j in 0..hd {
                    gm_adj[i * hd + j] = q2t[i] * dot2[j];
                    acc += s[i * hd + j] * dot[j];
                    let kv = kt[i] * vt[j];
                    let mv = match self.mode {
                        GapMode::Full => f * s[i * hd + j],
                        GapMode::HistoryOnly => f * (s[i * hd + j] - kv) + kv,
                    };
                    acc2 += mv * dot2[j];
                }
                dq.set(t, i, acc);
                dq2.set(t, i, acc2);
            }
            // df = ⟨G_M, S_t⟩ − [history] ⟨G_M, kᵀv⟩
            let mut df = T::zero();
            for i in 0..hd {
                for j in 0..hd {
                    let gmv = gm_adj[i * hd + j];
                    df += gmv * s[i * hd + j];
                    if self.mode == GapMode::HistoryOnly {
                        df -= gmv * kt[i] * vt[j];
                    }
                }
            }
            for idx in 0..sz {
                let (i, j) = (idx / hd, idx % hd);
                adj[idx] += qt[i] * dot[j] + f * gm_adj[idx];
                kv_adj[idx] = adj[idx] + c * gm_adj[idx];
            }
            {
                let dkt = dk.row_mut(t);
                for i in 0..hd {
                    dkt[i] = kv_adj[i * hd..(i + 1) * hd].iter().zip(vt).fold(T::zero(), |a, (&x, &y)| a + x * y);
                }
            }
            {
                let dvt = dv.row_mut(t);
                for i in 0..hd {
                    let ki = kt[i];
                    for (o, &a) in dvt.iter_mut().zip(&kv_adj[i * hd..(i + 1) * hd]) {
                        *o += ki * a;
                    }
                }
            }
            let mut dgt = df * T::of(self.gaps[t]) * f / g;
            if t > 0 {
                let prev = &self.states[(t - 1) * sz..t * sz];
                dgt += adj.iter().zip(prev).fold(T::zero(), |a, (&x, &y)| a + x * y);
            }
            dg.set(t, 0, dgt);
            for a in adj.iter_mut() {
                *a *= g;
            }
        }
        vec![Some(dq), Some(dk), Some(dv), Some(dg), Some(dq2)]
    }
}

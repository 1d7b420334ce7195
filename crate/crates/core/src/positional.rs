//! Rotary position embedding over real-valued timestamps.
//!
//! Pair `j` of a head vector is turned by `θ_j · t` with
//! `θ_j = time_scale · base^(−2j / head_dim)`. Queries and keys are both
//! turned by their own timestamp, so the real inner product of a rotated
//! query at `t_n` and a rotated key at `t_m` sees only `t_n − t_m`; this is
//! the real-arithmetic form of pairing `e^{iθt_n}` with the conjugate phase
//! `e^{−iθt_m}`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{CustomOp, Matrix, Scalar, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub theta_base: f64,
    pub time_scale: f64,
}

impl RopeConfig {
    pub fn new(head_dim: usize) -> Self {
        RopeConfig { head_dim, theta_base: 10_000.0, time_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.head_dim > 0 && self.head_dim.is_multiple_of(2),
            "rope head_dim must be even and positive, got {}",
            self.head_dim
        );
        ensure!(self.theta_base > 1.0, "rope theta_base must exceed 1");
        ensure!(self.time_scale > 0.0 && self.time_scale.is_finite(), "rope time_scale must be positive");
        Ok(())
    }

    /// Angular frequency of each rotation pair.
    pub fn frequencies(&self) -> Vec<f64> {
        let d = self.head_dim as f64;
        (0..self.head_dim / 2).map(|j| self.time_scale * self.theta_base.powf(-2.0 * j as f64 / d)).collect()
    }
}

/// cos/sin of every pair angle for every timestamp, row-major `times × pairs`.
#[derive(Debug, Clone)]
pub struct PhaseTable<T> {
    pairs: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> PhaseTable<T> {
    pub fn new(times: &[f64], cfg: &RopeConfig) -> Self {
        let freqs = cfg.frequencies();
        let mut cos = Vec::with_capacity(times.len() * freqs.len());
        let mut sin = Vec::with_capacity(times.len() * freqs.len());
        for &t in times {
            for &w in &freqs {
                let (s, c) = (w * t).sin_cos();
                cos.push(T::of(c));
                sin.push(T::of(s));
            }
        }
        PhaseTable { pairs: freqs.len(), cos, sin }
    }

    /// Rotates one `head_dim` block in place by the phases of row `n`.
    /// `sign = -1` applies the inverse rotation.
    fn rotate_block(&self, n: usize, block: &mut [T], sign: T) {
        let base = n * self.pairs;
        for j in 0..self.pairs {
            let (c, s) = (self.cos[base + j], sign * self.sin[base + j]);
            let (x0, x1) = (block[2 * j], block[2 * j + 1]);
            block[2 * j] = c * x0 - s * x1;
            block[2 * j + 1] = s * x0 + c * x1;
        }
    }

    /// Rotates every `head_dim` block of every row of `m`.
    fn rotate_rows(&self, m: &mut Matrix<T>, sign: T) {
        let hd = 2 * self.pairs;
        for r in 0..m.rows() {
            for block in m.row_mut(r).chunks_mut(hd) {
                self.rotate_block(r, block, sign);
            }
        }
    }
}

/// Rotates a single head vector counter-clockwise by `θ · t`.
pub fn rope_rotate<T: Scalar>(v: &[T], t: f64, cfg: &RopeConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    ensure!(v.len() == cfg.head_dim, "rope_rotate: vector length {} != head_dim {}", v.len(), cfg.head_dim);
    let table = PhaseTable::new(&[t], cfg);
    let mut out = v.to_vec();
    table.rotate_block(0, &mut out, T::one());
    Ok(out)
}

/// Rotates query and key rows by their timestamps.
///
/// Row widths must be a multiple of `head_dim`; each head block is rotated
/// independently.
pub fn rope_apply<T: Scalar>(
    q_rows: &Matrix<T>,
    k_rows: &Matrix<T>,
    times: &[f64],
    cfg: &RopeConfig,
) -> Result<(Matrix<T>, Matrix<T>)> {
    cfg.validate()?;
    ensure!(
        q_rows.rows() == times.len() && k_rows.rows() == times.len(),
        "rope_apply: {} query rows, {} key rows, {} timestamps",
        q_rows.rows(),
        k_rows.rows(),
        times.len()
    );
    ensure!(
        q_rows.cols().is_multiple_of(cfg.head_dim) && k_rows.cols().is_multiple_of(cfg.head_dim),
        "rope_apply: row width not a multiple of head_dim {}",
        cfg.head_dim
    );
    let table = PhaseTable::new(times, cfg);
    let (mut q, mut k) = (q_rows.clone(), k_rows.clone());
    table.rotate_rows(&mut q, T::one());
    table.rotate_rows(&mut k, T::one());
    Ok((q, k))
}

/// Rotates the rows of a matrix on the tape.
pub fn rope_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, times: &[f64], cfg: &RopeConfig) -> Result<Var> {
    cfg.validate()?;
    let vx = tape.value(x);
    ensure!(
        vx.rows() == times.len() && vx.cols().is_multiple_of(cfg.head_dim),
        "rope_tape: {:?} rows for {} timestamps (head_dim {})",
        vx.shape(),
        times.len(),
        cfg.head_dim
    );
    let table = PhaseTable::new(times, cfg);
    let mut out = vx.clone();
    table.rotate_rows(&mut out, T::one());
    Ok(tape.custom(&[x], out, Box::new(RopeOp { table })))
}

struct RopeOp<T> {
    table: PhaseTable<T>,
}

impl<T: Scalar> CustomOp<T> for RopeOp<T> {
    fn name(&self) -> &'static str {
        "rope"
    }

    fn backward(&self, _inputs: &[&Matrix<T>], _output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let mut dx = grad.clone();
        self.table.rotate_rows(&mut dx, -T::one());
        vec![Some(dx)]
    }
}

/// Sinusoidal encoding of raw timestamps, used when rotary encoding is
/// switched off. Column `2j` holds `sin(ω_j t)` and `2j+1` holds `cos(ω_j t)`.
pub fn absolute_encoding<T: Scalar>(times: &[f64], width: usize, cfg: &RopeConfig) -> Result<Matrix<T>> {
    ensure!(width.is_multiple_of(2), "absolute encoding width must be even");
    let freqs = RopeConfig { head_dim: width, ..*cfg }.frequencies();
    let mut data = Vec::with_capacity(times.len() * width);
    for &t in times {
        for &w in &freqs {
            let (s, c) = (w * t).sin_cos();
            data.push(T::of(s));
            data.push(T::of(c));
        }
    }
    Ok(Matrix::from_parts(times.len(), width, data))
}

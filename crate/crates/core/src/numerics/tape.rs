//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! Every forward pass records its operations on a fresh [`Tape`]. Nodes are
//! appended in evaluation order, so a node's inputs always precede it and the
//! backward sweep is a single reverse walk.

use super::functions::{gelu, gelu_grad, log_sum_exp, sigmoid_pow, sigmoid_pow_grad, softmax_in_place};
use super::matrix::{gemm, gemm_at, gemm_bt};
use super::{Matrix, Scalar};
use crate::error::{ensure, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation implemented outside the tape.
///
/// `backward` receives the forward inputs, the forward output and the
/// adjoint of the output, and returns one adjoint per input (`None` for
/// inputs that carry no gradient).
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Matrix<T>], output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Option<Matrix<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Gate { z: Var, tau: T },
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Matrix<T> },
    Sum(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    value: Matrix<T>,
    op: Op<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf (parameter or constant input).
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        ensure!(va.cols() == vb.rows(), "tape matmul mismatch {:?} x {:?}", va.shape(), vb.shape());
        let out = gemm(va, vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        ensure!(va.cols() == vb.cols(), "tape matmul_bt mismatch {:?} x {:?}ᵀ", va.shape(), vb.shape());
        let out = gemm_bt(va, vb);
        Ok(self.push(out, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1×c` row to every row of an `n×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        ensure!(vr.rows() == 1 && vr.cols() == va.cols(), "add_row expects 1x{} bias, got {:?}", va.cols(), vr.shape());
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a))
    }

    /// Elementwise decay gate `σ(z)^{1/τ}`.
    pub fn gate(&mut self, z: Var, tau: T) -> Var {
        let out = self.value(z).map(|v| sigmoid_pow(v, tau));
        self.push(out, Op::Gate { z, tau })
    }

    /// Root-mean-square normalisation of each row, scaled by a `1×d` gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        let (vx, vg) = (self.value(x), self.value(gain));
        ensure!(
            vg.rows() == 1 && vg.cols() == vx.cols(),
            "rms_norm gain must be 1x{}, got {:?}",
            vx.cols(),
            vg.shape()
        );
        let d = T::of(vx.cols() as f64);
        let mut out = vx.clone();
        let mut inv_rms = Vec::with_capacity(vx.rows());
        for r in 0..vx.rows() {
            let row = vx.row(r);
            let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) / d;
            let inv = T::one() / (ms + eps).sqrt();
            inv_rms.push(inv);
            for (o, (&xv, &g)) in out.row_mut(r).iter_mut().zip(row.iter().zip(vg.data())) {
                *o = xv * inv * g;
            }
        }
        Ok(self.push(out, Op::RmsNorm { x, gain, inv_rms }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let vx = self.value(x);
        ensure!(start + width <= vx.cols(), "slice_cols {}..{} out of {} columns", start, start + width, vx.cols());
        let out = vx.slice_cols(start, width);
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Matrix<T>> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let out = Matrix::concat_cols(&values)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        ensure!(ids.iter().all(|&i| i < vt.rows()), "gather id out of range for table with {} rows", vt.rows());
        let mut data = Vec::with_capacity(ids.len() * vt.cols());
        for &i in ids {
            data.extend_from_slice(vt.row(i));
        }
        let out = Matrix::from_parts(ids.len(), vt.cols(), data);
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }))
    }

    /// Weighted softmax cross-entropy: `Σ_n w_n · (lse(z_n) − z_n[y_n])`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let vz = self.value(logits);
        ensure!(
            targets.len() == vz.rows() && weights.len() == vz.rows(),
            "cross_entropy: {} logit rows, {} targets, {} weights",
            vz.rows(),
            targets.len(),
            weights.len()
        );
        ensure!(targets.iter().all(|&t| t < vz.cols()), "cross_entropy target out of range");
        let mut probs = vz.clone();
        let mut loss = T::zero();
        for r in 0..vz.rows() {
            if weights[r] != T::zero() {
                let row = vz.row(r);
                loss += weights[r] * (log_sum_exp(row) - row[targets[r]]);
            }
            softmax_in_place(probs.row_mut(r));
        }
        let out = Matrix::scalar(loss);
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Records an externally implemented op whose forward value is already
    /// computed.
    pub fn custom(&mut self, inputs: &[Var], output: Matrix<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Reverse sweep from a scalar output. Returns the adjoint of every node.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        ensure!(
            self.value(output).shape() == (1, 1),
            "backward needs a 1x1 output, got {:?}",
            self.value(output).shape()
        );
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = gemm_bt(&g, self.value(*b));
                    let db = gemm_at(self.value(*a), &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = gemm(&g, self.value(*b));
                    let db = gemm_at(&g, self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *row, db);
                }
                Op::Hadamard(a, b) => {
                    let da = zip(&g, self.value(*b), |x, y| x * y);
                    let db = zip(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Gelu(a) => {
                    let da = zip(&g, self.value(*a), |gv, x| gv * gelu_grad(x));
                    accumulate(&mut grads, *a, da);
                }
                Op::Gate { z, tau } => {
                    let dz = zip(&g, self.value(*z), |gv, zv| gv * sigmoid_pow_grad(zv, *tau));
                    accumulate(&mut grads, *z, dz);
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let (vx, vg) = (self.value(*x), self.value(*gain));
                    let d = T::of(vx.cols() as f64);
                    let mut dx = Matrix::zeros(vx.rows(), vx.cols());
                    let mut dgain = Matrix::zeros(1, vx.cols());
                    for r in 0..vx.rows() {
                        let (xr, gr, inv) = (vx.row(r), g.row(r), inv_rms[r]);
                        let mut proj = T::zero();
                        for c in 0..xr.len() {
                            proj += gr[c] * vg.data()[c] * xr[c];
                            dgain.data_mut()[c] += gr[c] * xr[c] * inv;
                        }
                        let coef = inv * inv * inv * proj / d;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = inv * gr[c] * vg.data()[c] - coef * xr[c];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                }
                Op::SliceCols { x, start } => {
                    let vx = self.value(*x);
                    let mut dx = Matrix::zeros(vx.rows(), vx.cols());
                    for r in 0..g.rows() {
                        dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(offset, w));
                        offset += w;
                    }
                }
                Op::Gather { table, ids } => {
                    let vt = self.value(*table);
                    let mut dt = Matrix::zeros(vt.rows(), vt.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, &v) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let upstream = g.data()[0];
                    let mut dz = probs.clone();
                    for r in 0..dz.rows() {
                        let w = weights[r] * upstream;
                        let row = dz.row_mut(r);
                        row[targets[r]] -= T::one();
                        for v in row.iter_mut() {
                            *v *= w;
                        }
                    }
                    accumulate(&mut grads, *logits, dz);
                }
                Op::Sum(a) => {
                    let va = self.value(*a);
                    let da = Matrix::filled(va.rows(), va.cols(), g.data()[0]);
                    accumulate(&mut grads, *a, da);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&Matrix<T>> = inputs.iter().map(|&i| self.value(i)).collect();
                    let outs = op.backward(&values, &node.value, &g);
                    debug_assert_eq!(outs.len(), inputs.len(), "{} returned wrong arity", op.name());
                    for (&i, d) in inputs.iter().zip(outs) {
                        if let Some(d) = d {
                            accumulate(&mut grads, i, d);
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn zip<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_parts(a.rows(), a.cols(), data)
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, d: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), d.shape());
            for (e, x) in existing.data_mut().iter_mut().zip(d.data()) {
                *e += *x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zero-filled to `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix<T> {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

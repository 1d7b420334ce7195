//! Causal softmax attention, used only by the GPT-2 ablation.

use crate::error::{ensure, Result};
use crate::numerics::{softmax_in_place, CustomOp, Matrix, Scalar, Tape, Var};

/// `softmax(mask(QKᵀ)) V` for one head. Queries are expected pre-scaled.
pub fn causal_softmax_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let (n, hd) = q.shape();
    ensure!(k.shape() == (n, hd) && v.shape() == (n, hd), "attention: q, k, v shapes differ");
    let mut probs = q.matmul_t(k)?;
    for r in 0..n {
        let row = probs.row_mut(r);
        softmax_in_place(&mut row[..=r]);
        for p in &mut row[r + 1..] {
            *p = T::zero();
        }
    }
    let out = probs.matmul(v)?;
    Ok((out, probs))
}

pub fn causal_softmax_tape<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    let (out, probs) = causal_softmax_attention(tape.value(q), tape.value(k), tape.value(v))?;
    Ok(tape.custom(&[q, k, v], out, Box::new(SoftmaxOp { probs })))
}

struct SoftmaxOp<T> {
    probs: Matrix<T>,
}

impl<T: Scalar> CustomOp<T> for SoftmaxOp<T> {
    fn name(&self) -> &'static str {
        "causal_softmax"
    }

    fn backward(&self, inputs: &[&Matrix<T>], _output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let p = &self.probs;
        let n = p.rows();
        let dv = p.t_matmul(grad).expect("shapes checked in forward");
        let mut ds = grad.matmul_t(v).expect("shapes checked in forward");
        for r in 0..n {
            let (pr, dr) = (p.row(r), ds.row_mut(r));
            let dotp = pr[..=r].iter().zip(&dr[..=r]).fold(T::zero(), |a, (&x, &y)| a + x * y);
            for c in 0..=r {
                dr[c] = pr[c] * (dr[c] - dotp);
            }
            for x in &mut dr[r + 1..] {
                *x = T::zero();
            }
        }
        let dq = ds.matmul(k).expect("shapes checked in forward");
        let dk = ds.t_matmul(q).expect("shapes checked in forward");
        vec![Some(dq), Some(dk), Some(dv)]
    }
}

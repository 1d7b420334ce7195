//! Scalar nonlinearities shared by the forward passes and the tape.

use super::Scalar;

/// Inputs to the decay gate are clamped to this magnitude before `exp`.
pub const GATE_CLAMP: f64 = 50.0;

/// `σ(z)^{1/τ}`, the tempered sigmoid used by the decay gate.
///
/// The logarithm of the sigmoid is evaluated with `ln_1p` on whichever side
/// keeps the exponent non-positive, so the result stays accurate near both
/// saturation limits.
pub fn sigmoid_pow<T: Scalar>(z: T, tau: T) -> T {
    let zc = z.max(T::of(-GATE_CLAMP)).min(T::of(GATE_CLAMP));
    (log_sigmoid(zc) / tau).exp()
}

/// Derivative of [`sigmoid_pow`] with respect to `z`; zero outside the clamp.
pub fn sigmoid_pow_grad<T: Scalar>(z: T, tau: T) -> T {
    let limit = T::of(GATE_CLAMP);
    if z > limit || z < -limit {
        return T::zero();
    }
    let g = sigmoid_pow(z, tau);
    g * (T::one() - sigmoid(z)) / tau
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn log_sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (x + T::of(GELU_C) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::of((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (x + T::of(GELU_C) * x * x * x);
    let th = inner.tanh();
    let dinner = k * (T::one() + T::of(3.0 * GELU_C) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * dinner
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let total = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + total.ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest entries in descending order; ties go to the
/// lower index. NaN entries rank last.
pub fn top_k<T: Scalar>(row: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (row[a], row[b]);
        match (x.is_nan(), y.is_nan()) {
            (true, true) => a.cmp(&b),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => y.partial_cmp(&x).unwrap().then(a.cmp(&b)),
        }
    });
    idx.truncate(k);
    idx
}

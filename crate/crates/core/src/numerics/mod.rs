//! Dense matrices, scalar nonlinearities, the differentiation tape and the
//! finite-difference gradient oracle.

mod functions;
mod gradcheck;
mod matrix;
mod scalar;
mod tape;

pub use functions::{
    argmax, gelu, gelu_grad, log_sum_exp, sigmoid, sigmoid_pow, sigmoid_pow_grad, softmax, softmax_in_place, top_k,
    GATE_CLAMP,
};
pub use gradcheck::finite_diff_check;
pub use matrix::{dot, Matrix};
pub use scalar::{Precision, Scalar};
pub use tape::{CustomOp, Gradients, Tape, Var};

/// Free-function form of [`Matrix::matmul`].
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> crate::Result<Matrix<T>> {
    a.matmul(b)
}

/// Runs the reverse sweep of `tape` from the scalar node `output`.
pub fn backward<T: Scalar>(tape: &Tape<T>, output: Var) -> crate::Result<Gradients<T>> {
    tape.backward(output)
}

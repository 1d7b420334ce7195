use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Scalar};

/// Per-token decay factors of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySchedule<T> {
    gammas: Vec<T>,
}

impl<T: Scalar> DecaySchedule<T> {
    pub fn from_gammas(gammas: Vec<T>) -> Result<Self> {
        ensure!(!gammas.is_empty(), "decay schedule is empty");
        for (i, &g) in gammas.iter().enumerate() {
            ensure!(g > T::zero() && g <= T::one(), "gamma[{i}] = {g} outside (0, 1]");
        }
        Ok(DecaySchedule { gammas })
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn gammas(&self) -> &[T] {
        &self.gammas
    }
}

/// Causal decay matrix, `D[n][m] = Π_{t=m+1..n} γ_t` for `m ≤ n`, zero above
/// the diagonal.
///
/// Each column is filled downward by a running product, so no entry is ever
/// obtained by dividing two cumulative products.
pub fn build_decay_matrix<T: Scalar>(schedule: &DecaySchedule<T>) -> Matrix<T> {
    let n = schedule.len();
    let g = schedule.gammas();
    let mut d = Matrix::zeros(n, n);
    for m in 0..n {
        let mut acc = T::one();
        d.set(m, m, acc);
        for r in m + 1..n {
            acc *= g[r];
            d.set(r, m, acc);
        }
    }
    d
}

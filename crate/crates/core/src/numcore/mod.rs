//! Dense numeric core: reverse-mode autodiff, MLPs, Adam and a seeded RNG.

mod adam;
mod gradcheck;
mod mlp;
mod rng;
mod tape;

pub use adam::Adam;
pub use gradcheck::grad_check;
pub use mlp::Mlp;
pub use rng::Rng;
pub use tape::{Gradients, Matrix, Param, ParamId, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a [1, 1] scalar, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("non-finite gradient for parameter {0:?}")]
    NonFiniteGradient(ParamId),
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Builds a `[n, 1]` column from a slice.
pub fn column(values: &[f64]) -> Matrix {
    Matrix::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}

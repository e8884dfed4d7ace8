//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Only the primitive set needed by a pre-norm transformer is provided.
//! Broadcasting is limited to a `[rows, features]` matrix combined with a
//! `[features]` row vector ([`Tape::add_row`], [`Tape::mul_row`]).

mod kernels;
mod tape;
mod tensor;

use thiserror::Error;

pub use kernels::{matmul, matmul_nt, matmul_tn};
pub use tape::{Tape, Var};
pub use tensor::{Float, Tensor};

/// Epsilon added to the variance inside the square root of [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("variable is not a leaf of this tape")]
    LeafNotOnTape,
    #[error("gradient source must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

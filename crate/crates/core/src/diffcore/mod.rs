//! Minimal reverse-mode differentiable computation over dense 2-D tensors,
//! plus the optimizers the models in this crate train with.
//!
//! The compute core runs in 64-bit floats; the persisted embedding format
//! stays 32-bit at rest (see [`crate::encoding`]).

mod checkpoint;
pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, restore_params, save_checkpoint, save_params};
pub use optim::{clip_weights, RmsProp};
pub use tape::{Axis, Tape, Var};
pub use tensor::{Parameter, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: operand shapes {lhs:?} and {rhs:?} are incompatible")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("buffer of length {len} cannot form a {rows}x{cols} tensor")]
    BadBuffer { rows: usize, cols: usize, len: usize },
    #[error("{rows} rows cannot be grouped into blocks of {block}")]
    BadBlock { rows: usize, block: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("backward produced a non-finite gradient")]
    NonFiniteGradient,
    #[error("concat requires at least one operand")]
    EmptyConcat,
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

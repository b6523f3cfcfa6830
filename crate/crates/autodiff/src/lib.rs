//! Reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Tape`] records every operation eagerly: building an expression is the
//! forward pass. [`Tape::backward`] then walks the tape in reverse and returns
//! [`Gradients`] for every node. Parameters live in a [`ParamStore`] outside
//! the tape so a fresh tape can be recorded per training step.
//!
//! ```
//! use dormant_autodiff::{ParamStore, Tape};
//! use ndarray::array;
//!
//! let mut store = ParamStore::new();
//! let x_id = store.register("x", array![[3.0]]).unwrap();
//! let mut tape = Tape::new(false);
//! let x = tape.param(&store, x_id);
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap()[[0, 0]], 6.0);
//! ```

mod adam;
mod check;
mod params;
pub mod sparse;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use check::{finite_difference_check, FdReport};
pub use params::{NamedParam, ParamCheckpoint, ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Tape, Var, LOG_FLOOR};

pub use ndarray;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of bounds ({bound})")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar (1x1) loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("backward called before any forward operation was recorded")]
    NoForward,
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("parameter {0:?} registered twice")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("malformed sparse matrix")]
    MalformedSparse,
    #[error("non-finite gradient for parameter {0:?}; optimizer step aborted")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

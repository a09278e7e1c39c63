//! Dense 64-bit tensors, a reverse-mode computation record, and Adam.
//!
//! Every differentiable primitive the summarizer needs lives on [`Graph`]:
//! elementwise arithmetic and nonlinearities, matrix products, the narrow
//! temporal convolution with its softplus, max-over-time pooling, local
//! response normalization, (masked) softmax, and cross-entropy. Composite
//! blocks such as [`lstm_cell`] are built from those primitives, so their
//! gradients are exact by construction.
//!
//! ```
//! use sidesum::ndcore::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![0.0, 1.0]));
//! let y = g.softplus(x).unwrap();
//! let loss = g.sum(y).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert!((grads.wrt(x).data()[0] - 0.5).abs() < 1e-12);
//! ```

mod adam;
mod graph;
mod lstm;
mod tensor;

pub use adam::{Adam, AdamState};
pub use graph::{Gradients, Graph, LrnParams, Var};
pub use lstm::{lstm_cell, LstmState, LstmVars};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, NdError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(NdError::ShapeMismatch {
        op,
        detail: detail.into(),
    })
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

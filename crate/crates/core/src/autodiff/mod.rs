//! Minimal reverse-mode automatic differentiation.
//!
//! Provides exactly the operators the CNN-BiLSTM regressor needs: 2-D
//! convolution, batch normalization, ReLU, linear layers, LSTM cells,
//! pooling, concatenation/narrowing, reductions and an L1 loss.

mod conv;
mod element;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use conv::out_size as conv_output_size;
pub use element::{DType, Element};
pub use params::{Bindings, Param, ParamId, ParamStore};
pub use tape::{BatchStats, LstmVars, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error("non-finite value in tensor #{index} produced by {op}")]
    NonFinite { index: usize, op: &'static str },
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        AutodiffError::Shape { op, detail }
    }
}

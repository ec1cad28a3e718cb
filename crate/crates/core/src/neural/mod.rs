//! Minimal differentiable layer set for the staging architectures: 1D
//! convolution (as height-preserving 1x`k` kernels), ReLU, batch norm,
//! average pooling, dense, dropout, LSTM, softmax cross-entropy. Every layer
//! has a hand-derived backward pass validated by the central finite
//! difference harness in [`gradcheck`]. All math is f64.

mod batchnorm;
mod conv;
mod dense;
pub mod gradcheck;
mod lstm;
mod ops;
mod params;

pub use batchnorm::{BatchNorm, BnCache};
pub use conv::{ConvEngine, ConvLayer, ConvScratch};
pub use dense::Dense;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use lstm::{Lstm, LstmCache};
pub use ops::{
    avg_pool2, avg_pool2_backward, cross_entropy, dropout_infer, dropout_train, relu,
    relu_backward_mask, relu_inplace, softmax, softmax_cross_entropy_backward,
    softmax_cross_entropy_batch, SoftmaxCeCache,
};
pub use params::{read_params, sgd_step_bundle, write_params, ParamBundle, ParamTensor, Parameterized};

use ndarray::Array3;
use thiserror::Error;

/// Channels x height x width activation tensor, row-major.
pub type Tensor3 = Array3<f64>;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("state error: {0}")]
    State(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("parameter container error: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether a forward pass uses batch statistics and dropout (training) or
/// running statistics and identity dropout (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Validate the Tensor3 invariants: positive dims and finite values.
pub fn validate_tensor(t: &Tensor3) -> Result<(), NeuralError> {
    let (c, h, w) = t.dim();
    if c == 0 || h == 0 || w == 0 {
        return Err(NeuralError::Shape(format!("empty tensor dims ({c}, {h}, {w})")));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(NeuralError::Shape("non-finite tensor value".to_string()));
    }
    Ok(())
}

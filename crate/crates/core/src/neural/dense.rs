//! Fully-connected layer, batched: y = x W^T + b.

use super::NeuralError;
use ndarray::{Array1, Array2, Axis};

#[derive(Debug, Clone)]
pub struct Dense {
    /// `[out_features, in_features]`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

pub struct DenseGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Dense { weights: Array2::zeros((out_features, in_features)), bias: Array1::zeros(out_features) }
    }

    pub fn in_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_features(&self) -> usize {
        self.weights.nrows()
    }

    /// `x`: [batch, in_features] -> [batch, out_features].
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>, NeuralError> {
        if x.ncols() != self.in_features() {
            return Err(NeuralError::Shape(format!(
                "dense expects {} input features, got {}",
                self.in_features(),
                x.ncols()
            )));
        }
        let mut y = x.dot(&self.weights.t());
        y += &self.bias;
        Ok(y)
    }

    pub fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>) -> (Array2<f64>, DenseGrads) {
        let grad_weights = grad_out.t().dot(x);
        let grad_bias = grad_out.sum_axis(Axis(0));
        let grad_in = grad_out.dot(&self.weights);
        (grad_in, DenseGrads { weights: grad_weights, bias: grad_bias })
    }
}

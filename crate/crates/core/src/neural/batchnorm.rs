//! Batch normalization over feature maps: statistics per output channel
//! across (batch, height, width), epsilon 1e-5, running-stat momentum 0.9.

use super::{NeuralError, Tensor3};
use ndarray::Array1;

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

pub struct BnCache {
    /// Per-sample normalized activations (pre gamma/beta).
    pub xhat: Vec<Tensor3>,
    pub inv_std: Array1<f64>,
    /// Batch mean; with `inv_std` this recovers the pre-normalization sign
    /// (x > 0 iff xhat > -mean * inv_std), so the preceding ReLU needs no
    /// stored mask.
    pub mean: Array1<f64>,
}

pub struct BnGrads {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

fn channel_slices(t: &Tensor3) -> (usize, usize, &[f64]) {
    let (c, h, w) = t.dim();
    (c, h * w, t.as_slice().expect("standard layout"))
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.9,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, batch: &[Tensor3]) -> Result<(), NeuralError> {
        for t in batch {
            if t.dim().0 != self.channels() {
                return Err(NeuralError::Shape(format!(
                    "batch norm expects {} channels, got {}",
                    self.channels(),
                    t.dim().0
                )));
            }
        }
        Ok(())
    }

    /// Training-mode forward: normalize by batch statistics (population
    /// variance), update running statistics, return the cache for backward.
    pub fn forward_train(&mut self, batch: &[Tensor3]) -> Result<(Vec<Tensor3>, BnCache), NeuralError> {
        if batch.len() < 2 {
            return Err(NeuralError::Mode(format!(
                "batch norm training requires batch size >= 2, got {}",
                batch.len()
            )));
        }
        self.check(batch)?;
        let c = self.channels();
        let plane = batch[0].dim().1 * batch[0].dim().2;
        let n = (batch.len() * plane) as f64;

        let mut mean = Array1::<f64>::zeros(c);
        for t in batch {
            let (_, _, data) = channel_slices(t);
            for (ci, chunk) in data.chunks_exact(plane).enumerate() {
                mean[ci] += chunk.iter().sum::<f64>();
            }
        }
        mean.mapv_inplace(|v| v / n);

        let mut var = Array1::<f64>::zeros(c);
        for t in batch {
            let (_, _, data) = channel_slices(t);
            for (ci, chunk) in data.chunks_exact(plane).enumerate() {
                let m = mean[ci];
                var[ci] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
        }
        var.mapv_inplace(|v| v / n);

        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = Vec::with_capacity(batch.len());
        let mut out = Vec::with_capacity(batch.len());
        for t in batch {
            let mut xh = t.clone();
            {
                let data = xh.as_slice_mut().expect("standard layout");
                for (ci, chunk) in data.chunks_exact_mut(plane).enumerate() {
                    let m = mean[ci];
                    let s = inv_std[ci];
                    chunk.iter_mut().for_each(|v| *v = (*v - m) * s);
                }
            }
            let mut y = xh.clone();
            {
                let data = y.as_slice_mut().expect("standard layout");
                for (ci, chunk) in data.chunks_exact_mut(plane).enumerate() {
                    let g = self.gamma[ci];
                    let b = self.beta[ci];
                    chunk.iter_mut().for_each(|v| *v = g * *v + b);
                }
            }
            xhat.push(xh);
            out.push(y);
        }

        for ci in 0..c {
            self.running_mean[ci] = self.momentum * self.running_mean[ci] + (1.0 - self.momentum) * mean[ci];
            self.running_var[ci] = self.momentum * self.running_var[ci] + (1.0 - self.momentum) * var[ci];
        }
        Ok((out, BnCache { xhat, inv_std, mean }))
    }

    /// Inference-mode forward using running statistics; per-sample pure.
    pub fn forward_infer(&self, batch: &[Tensor3]) -> Result<Vec<Tensor3>, NeuralError> {
        let mut out: Vec<Tensor3> = batch.to_vec();
        self.forward_infer_inplace(&mut out)?;
        Ok(out)
    }

    /// In-place inference normalization, avoiding per-sample clones on the
    /// scoring path.
    pub fn forward_infer_inplace(&self, batch: &mut [Tensor3]) -> Result<(), NeuralError> {
        self.check(batch)?;
        let plane = if batch.is_empty() { 0 } else { batch[0].dim().1 * batch[0].dim().2 };
        for t in batch.iter_mut() {
            let data = t.as_slice_mut().expect("standard layout");
            for (ci, chunk) in data.chunks_exact_mut(plane).enumerate() {
                let m = self.running_mean[ci];
                let s = 1.0 / (self.running_var[ci] + self.eps).sqrt();
                let g = self.gamma[ci];
                let b = self.beta[ci];
                chunk.iter_mut().for_each(|v| *v = g * (*v - m) * s + b);
            }
        }
        Ok(())
    }

    /// Backward through the batch-statistics normalization:
    /// dx = (gamma / sigma) * (dy - mean(dy) - xhat * mean(dy * xhat)).
    pub fn backward(&self, cache: &BnCache, grad_out: &[Tensor3]) -> (Vec<Tensor3>, BnGrads) {
        let c = self.channels();
        let plane = grad_out[0].dim().1 * grad_out[0].dim().2;
        let n = (grad_out.len() * plane) as f64;

        let mut sum_dy = Array1::<f64>::zeros(c);
        let mut sum_dy_xhat = Array1::<f64>::zeros(c);
        for (g, xh) in grad_out.iter().zip(&cache.xhat) {
            let (_, _, gd) = channel_slices(g);
            let (_, _, xd) = channel_slices(xh);
            for ci in 0..c {
                let gs = &gd[ci * plane..(ci + 1) * plane];
                let xs = &xd[ci * plane..(ci + 1) * plane];
                let mut sd = 0.0;
                let mut sdx = 0.0;
                for (gv, xv) in gs.iter().zip(xs) {
                    sd += gv;
                    sdx += gv * xv;
                }
                sum_dy[ci] += sd;
                sum_dy_xhat[ci] += sdx;
            }
        }

        let grad_in = grad_out
            .iter()
            .zip(&cache.xhat)
            .map(|(g, xh)| {
                let mut gi = g.clone();
                let (_, _, xd) = channel_slices(xh);
                let data = gi.as_slice_mut().expect("standard layout");
                for ci in 0..c {
                    let coeff = self.gamma[ci] * cache.inv_std[ci];
                    let mean_dy = sum_dy[ci] / n;
                    let mean_dy_xhat = sum_dy_xhat[ci] / n;
                    let xs = &xd[ci * plane..(ci + 1) * plane];
                    let chunk = &mut data[ci * plane..(ci + 1) * plane];
                    for (gv, xv) in chunk.iter_mut().zip(xs) {
                        *gv = coeff * (*gv - mean_dy - xv * mean_dy_xhat);
                    }
                }
                gi
            })
            .collect();
        (grad_in, BnGrads { gamma: sum_dy_xhat, beta: sum_dy })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(values: &[f64]) -> Tensor3 {
        Tensor3::from_shape_vec((1, 1, values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn train_mode_requires_two_samples() {
        let mut bn = BatchNorm::new(1);
        let batch = vec![tensor(&[1.0, 2.0])];
        assert!(matches!(bn.forward_train(&batch), Err(NeuralError::Mode(_))));
    }

    #[test]
    fn infer_identity_stats_scales_by_inv_sqrt_eps() {
        let bn = BatchNorm::new(1);
        let batch = vec![tensor(&[1.0, -2.0, 0.5])];
        let out = bn.forward_infer(&batch).unwrap();
        let s = 1.0 / (1.0 + 1e-5f64).sqrt();
        for (y, x) in out[0].iter().zip(batch[0].iter()) {
            assert!((y - x * s).abs() < 1e-12);
        }
    }

    #[test]
    fn train_normalizes_plus_minus_one_batch() {
        let mut bn = BatchNorm::new(1);
        let batch = vec![tensor(&[-1.0, -1.0]), tensor(&[1.0, 1.0])];
        let (out, _) = bn.forward_train(&batch).unwrap();
        let expect = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!((out[0][(0, 0, 0)] + expect).abs() < 1e-9);
        assert!((out[1][(0, 0, 0)] - expect).abs() < 1e-9);
        // Running stats moved toward batch stats with momentum 0.9.
        assert!((bn.running_mean[0] - 0.0).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 * 1.0 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_beta_only_output() {
        let mut bn = BatchNorm::new(1);
        bn.gamma[0] = 0.0;
        bn.beta[0] = 3.25;
        let batch = vec![tensor(&[0.4, -1.0]), tensor(&[2.0, 7.0])];
        let (out, _) = bn.forward_train(&batch).unwrap();
        for t in &out {
            for v in t.iter() {
                assert!((v - 3.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn running_stats_momentum_sequence() {
        let mut bn = BatchNorm::new(1);
        let batch = vec![tensor(&[2.0, 2.0]), tensor(&[6.0, 6.0])];
        bn.forward_train(&batch).unwrap();
        // Batch mean 4, population var 4.
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn multichannel_stats_are_per_map() {
        let mut bn = BatchNorm::new(2);
        let a = Tensor3::from_shape_vec((2, 1, 2), vec![1.0, 3.0, 10.0, 10.0]).unwrap();
        let b = Tensor3::from_shape_vec((2, 1, 2), vec![5.0, 7.0, 30.0, 30.0]).unwrap();
        let (_, cache) = bn.forward_train(&[a, b]).unwrap();
        assert!((cache.mean[0] - 4.0).abs() < 1e-12);
        assert!((cache.mean[1] - 20.0).abs() < 1e-12);
    }
}

//! Batched training and evaluation passes through the full architectures.
//!
//! CNN-LSTM batches reference a deduplicated list of epoch patterns: each
//! sequence stores indices into `unique`, the CNN runs once per unique
//! pattern (batch-norm statistics are taken over that unique set) and the
//! LSTM gathers feature rows. Gradients scatter-add back by index, which is
//! exact because the shared CNN applications are shared subexpressions.

use super::model::{Head, StagingModel};
use super::StagingError;
use crate::neural::{
    avg_pool2, avg_pool2_backward, dropout_train, relu_inplace, softmax_cross_entropy_backward,
    softmax_cross_entropy_batch, BnCache, ConvScratch, NeuralError, ParamBundle, Parameterized,
    Phase, Tensor3,
};
use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

/// One training batch in the model's input representation.
#[derive(Debug, Clone)]
pub enum BatchInput {
    /// Standardized 4 x (3000 L) patterns with the center epoch's label.
    CnnOnly { patterns: Vec<Array2<f64>>, targets: Vec<usize> },
    /// Standardized unique 4 x 3000 patterns plus per-sequence index lists
    /// (length L each) and the center epoch's label.
    CnnLstm { unique: Vec<Array2<f64>>, sequences: Vec<Vec<usize>>, targets: Vec<usize> },
}

impl BatchInput {
    pub fn len(&self) -> usize {
        match self {
            BatchInput::CnnOnly { targets, .. } => targets.len(),
            BatchInput::CnnLstm { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct TrainStep {
    pub loss: f64,
    pub gradients: ParamBundle,
}

struct BlockCache {
    conv_inputs: Vec<Tensor3>,
    bn_cache: BnCache,
    pool_in_width: usize,
}

struct CnnCache {
    blocks: Vec<BlockCache>,
    flat: Array2<f64>,
}

struct CnnGrads {
    blocks: Vec<(Array2<f64>, Array1<f64>, Array1<f64>, Array1<f64>)>,
    feature_w: Array2<f64>,
    feature_b: Array1<f64>,
}

fn to_tensor(pattern: &Array2<f64>) -> Tensor3 {
    let (h, w) = pattern.dim();
    let mut t = Tensor3::zeros((1, h, w));
    for hi in 0..h {
        for wi in 0..w {
            t[(0, hi, wi)] = pattern[(hi, wi)];
        }
    }
    t
}

fn flatten_batch(batch: &[Tensor3]) -> Array2<f64> {
    let n = batch.len();
    let len = batch[0].len();
    let mut out = Array2::zeros((n, len));
    for (i, t) in batch.iter().enumerate() {
        let slice = t.as_slice().expect("standard layout");
        out.row_mut(i).assign(&ndarray::ArrayView1::from(slice));
    }
    out
}

impl StagingModel {
    fn check_pattern(&self, p: &Array2<f64>, width: usize) -> Result<(), StagingError> {
        if p.dim() != (4, width) {
            return Err(StagingError::Neural(NeuralError::Shape(format!(
                "pattern shape {:?}, expected (4, {width})",
                p.dim()
            ))));
        }
        Ok(())
    }

    /// Training-mode CNN pass over a batch of patterns; returns the feature
    /// matrix [N, feature_size] and caches for backward.
    fn cnn_forward_train(
        &mut self,
        patterns: &[Array2<f64>],
        scratch: &mut ConvScratch,
    ) -> Result<(Array2<f64>, CnnCache), StagingError> {
        let width = self.config.cnn_input_width();
        for p in patterns {
            self.check_pattern(p, width)?;
        }
        let engine = self.engine;
        let mut xs: Vec<Tensor3> = patterns.iter().map(to_tensor).collect();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (conv, bn) in &mut self.blocks {
            let mut relu_out = conv.forward_batch(&xs, engine, scratch)?;
            relu_out.iter_mut().for_each(relu_inplace);
            let (bn_out, bn_cache) = bn.forward_train(&relu_out)?;
            drop(relu_out);
            let pool_in_width = bn_out[0].dim().2;
            let pooled: Vec<Tensor3> = bn_out.iter().map(avg_pool2).collect();
            blocks.push(BlockCache { conv_inputs: xs, bn_cache, pool_in_width });
            xs = pooled;
        }
        let flat = flatten_batch(&xs);
        let features = self.feature.forward(&flat)?;
        Ok((features, CnnCache { blocks, flat }))
    }

    /// Inference-mode CNN pass over a batch (running statistics, no caches).
    /// Per-sample pure; batching only shares kernel spectra and GEMM calls.
    pub(super) fn cnn_forward_infer(
        &self,
        patterns: &[Array2<f64>],
        scratch: &mut ConvScratch,
    ) -> Result<Array2<f64>, StagingError> {
        let width = self.config.cnn_input_width();
        for p in patterns {
            self.check_pattern(p, width)?;
        }
        if patterns.is_empty() {
            return Ok(Array2::zeros((0, self.config.feature_size)));
        }
        let mut xs: Vec<Tensor3> = patterns.iter().map(to_tensor).collect();
        for (conv, bn) in &self.blocks {
            let mut out = conv.forward_batch(&xs, self.engine, scratch)?;
            out.iter_mut().for_each(relu_inplace);
            bn.forward_infer_inplace(&mut out)?;
            xs = out.iter().map(avg_pool2).collect();
        }
        let flat = flatten_batch(&xs);
        Ok(self.feature.forward(&flat)?)
    }

    /// Backward through feature dense and the operational blocks.
    fn cnn_backward(
        &self,
        cache: &CnnCache,
        d_features: &Array2<f64>,
        scratch: &mut ConvScratch,
    ) -> Result<CnnGrads, StagingError> {
        let engine = self.engine;
        let (d_flat, feature_grads) = self.feature.backward(&cache.flat, d_features);
        // Un-flatten into the last block's pooled output shape.
        let last_width = *self.config.width_trace().last().unwrap();
        let last_c = *self.config.channel_trace().last().unwrap();
        let n = d_flat.nrows();
        let mut d_xs: Vec<Tensor3> = (0..n)
            .map(|i| {
                Tensor3::from_shape_vec((last_c, 4, last_width), d_flat.row(i).to_vec())
                    .expect("flatten size matches")
            })
            .collect();

        let mut block_grads: Vec<(Array2<f64>, Array1<f64>, Array1<f64>, Array1<f64>)> =
            Vec::with_capacity(self.blocks.len());
        for (k, (conv, bn)) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[k];
            let d_bn_out: Vec<Tensor3> =
                d_xs.iter().map(|g| avg_pool2_backward(bc.pool_in_width, g)).collect();
            let (mut d_bn_in, bn_grads) = bn.backward(&bc.bn_cache, &d_bn_out);
            drop(d_bn_out);
            // ReLU mask: pre-BN activation positive iff xhat > -mean/std.
            for (g, xh) in d_bn_in.iter_mut().zip(&bc.bn_cache.xhat) {
                let c = g.dim().0;
                for ci in 0..c {
                    let threshold = -bc.bn_cache.mean[ci] * bc.bn_cache.inv_std[ci];
                    let (_, h, w) = g.dim();
                    for hi in 0..h {
                        for wi in 0..w {
                            if xh[(ci, hi, wi)] <= threshold {
                                g[(ci, hi, wi)] = 0.0;
                            }
                        }
                    }
                }
            }
            let (d_prev, conv_grads) =
                conv.backward_batch(&bc.conv_inputs, &d_bn_in, engine, scratch)?;
            block_grads.push((conv_grads.weights, conv_grads.bias, bn_grads.gamma, bn_grads.beta));
            d_xs = d_prev;
        }
        block_grads.reverse();
        Ok(CnnGrads { blocks: block_grads, feature_w: feature_grads.weights, feature_b: feature_grads.bias })
    }

    /// One training forward/backward pass over a batch; returns the mean
    /// cross-entropy loss and the gradient bundle (congruent with
    /// `export_params`; running statistics carry zero gradients).
    pub fn train_step(
        &mut self,
        batch: &BatchInput,
        rng: &mut ChaCha8Rng,
        scratch: &mut ConvScratch,
    ) -> Result<TrainStep, StagingError> {
        if self.mode != Phase::Train {
            return Err(StagingError::Neural(NeuralError::Mode(
                "train_step requires training mode".to_string(),
            )));
        }
        if batch.is_empty() {
            return Err(StagingError::Argument("empty training batch".to_string()));
        }
        match batch {
            BatchInput::CnnOnly { patterns, targets } => {
                let (features, cache) = self.cnn_forward_train(patterns, scratch)?;
                let relu_f = features.mapv(|v| v.max(0.0));
                let (dropped, mask) = dropout_train(&relu_f, 0.5, rng)?;
                let output = match &self.head {
                    Head::CnnOnly { output } => output,
                    _ => unreachable!("config kind checked at construction"),
                };
                let logits = output.forward(&dropped)?;
                let (loss, ce) = softmax_cross_entropy_batch(&logits, targets)?;
                let d_logits = softmax_cross_entropy_backward(&ce);
                let (d_dropped, out_grads) = output.backward(&dropped, &d_logits);
                let mut d_features = d_dropped * &mask;
                d_features.zip_mut_with(&relu_f, |g, &y| {
                    if y <= 0.0 {
                        *g = 0.0;
                    }
                });
                let cnn = self.cnn_backward(&cache, &d_features, scratch)?;
                Ok(TrainStep { loss, gradients: self.bundle_grads(cnn, &[out_grads.weights], &[out_grads.bias], None) })
            }
            BatchInput::CnnLstm { unique, sequences, targets } => {
                let l = self.config.sequence_len;
                for seq in sequences {
                    if seq.len() != l {
                        return Err(StagingError::Neural(NeuralError::Shape(format!(
                            "sequence length {} does not match configured L = {l}",
                            seq.len()
                        ))));
                    }
                }
                let (features, cache) = self.cnn_forward_train(unique, scratch)?;
                let b = sequences.len();
                let steps: Vec<Array2<f64>> = (0..l)
                    .map(|t| {
                        let mut m = Array2::zeros((b, self.config.feature_size));
                        for (bi, seq) in sequences.iter().enumerate() {
                            m.row_mut(bi).assign(&features.row(seq[t]));
                        }
                        m
                    })
                    .collect();
                let (lstm, output) = match &self.head {
                    Head::CnnLstm { lstm, output } => (lstm, output),
                    _ => unreachable!("config kind checked at construction"),
                };
                let (hiddens, lstm_cache) = lstm.forward(&steps)?;
                let h_last = hiddens.last().unwrap().clone();
                let logits = output.forward(&h_last)?;
                let (loss, ce) = softmax_cross_entropy_batch(&logits, targets)?;
                let d_logits = softmax_cross_entropy_backward(&ce);
                let (d_h_last, out_grads) = output.backward(&h_last, &d_logits);
                let mut grad_h = vec![Array2::zeros((b, self.config.lstm_hidden)); l];
                grad_h[l - 1] = d_h_last;
                let (d_steps, lstm_grads) = lstm.backward(&lstm_cache, &grad_h);
                let mut d_features = Array2::zeros(features.dim());
                for (bi, seq) in sequences.iter().enumerate() {
                    for (t, &idx) in seq.iter().enumerate() {
                        let mut row = d_features.row_mut(idx);
                        row += &d_steps[t].row(bi);
                    }
                }
                let cnn = self.cnn_backward(&cache, &d_features, scratch)?;
                Ok(TrainStep {
                    loss,
                    gradients: self.bundle_grads(
                        cnn,
                        &[out_grads.weights],
                        &[out_grads.bias],
                        Some((lstm_grads.wx, lstm_grads.wh, lstm_grads.bias)),
                    ),
                })
            }
        }
    }

    /// Forward-only training-mode loss (batch statistics, fresh dropout
    /// masks from `rng`). Used by the finite-difference gradient harness,
    /// where the backward pass would be wasted work.
    pub fn train_loss(
        &mut self,
        batch: &BatchInput,
        rng: &mut ChaCha8Rng,
        scratch: &mut ConvScratch,
    ) -> Result<f64, StagingError> {
        if self.mode != Phase::Train {
            return Err(StagingError::Neural(NeuralError::Mode(
                "train_loss requires training mode".to_string(),
            )));
        }
        match batch {
            BatchInput::CnnOnly { patterns, targets } => {
                let (features, _cache) = self.cnn_forward_train(patterns, scratch)?;
                let relu_f = features.mapv(|v| v.max(0.0));
                let (dropped, _mask) = dropout_train(&relu_f, 0.5, rng)?;
                let output = match &self.head {
                    Head::CnnOnly { output } => output,
                    _ => unreachable!(),
                };
                let logits = output.forward(&dropped)?;
                Ok(softmax_cross_entropy_batch(&logits, targets)?.0)
            }
            BatchInput::CnnLstm { unique, sequences, targets } => {
                let (features, _cache) = self.cnn_forward_train(unique, scratch)?;
                let logits = self.lstm_logits(&features, sequences)?;
                Ok(softmax_cross_entropy_batch(&logits, targets)?.0)
            }
        }
    }

    /// Mean cross-entropy of a batch under inference semantics (running
    /// statistics, identity dropout). Used for validation loss.
    pub fn batch_loss(&self, batch: &BatchInput, scratch: &mut ConvScratch) -> Result<f64, StagingError> {
        match batch {
            BatchInput::CnnOnly { patterns, targets } => {
                let features = self.cnn_forward_infer(patterns, scratch)?;
                let relu_f = features.mapv(|v| v.max(0.0));
                let output = match &self.head {
                    Head::CnnOnly { output } => output,
                    _ => unreachable!(),
                };
                let logits = output.forward(&relu_f)?;
                Ok(softmax_cross_entropy_batch(&logits, targets)?.0)
            }
            BatchInput::CnnLstm { unique, sequences, targets } => {
                let features = self.cnn_forward_infer(unique, scratch)?;
                let logits = self.lstm_logits(&features, sequences)?;
                Ok(softmax_cross_entropy_batch(&logits, targets)?.0)
            }
        }
    }

    /// LSTM head logits for sequences given a per-epoch feature matrix.
    pub(super) fn lstm_logits(
        &self,
        features: &Array2<f64>,
        sequences: &[Vec<usize>],
    ) -> Result<Array2<f64>, StagingError> {
        let l = self.config.sequence_len;
        let b = sequences.len();
        for seq in sequences {
            if seq.len() != l {
                return Err(StagingError::Neural(NeuralError::Shape(format!(
                    "sequence length {} does not match configured L = {l}",
                    seq.len()
                ))));
            }
        }
        let (lstm, output) = match &self.head {
            Head::CnnLstm { lstm, output } => (lstm, output),
            _ => {
                return Err(StagingError::Config(
                    "LSTM head requested on a CNN-only model".to_string(),
                ))
            }
        };
        let steps: Vec<Array2<f64>> = (0..l)
            .map(|t| {
                let mut m = Array2::zeros((b, self.config.feature_size));
                for (bi, seq) in sequences.iter().enumerate() {
                    m.row_mut(bi).assign(&features.row(seq[t]));
                }
                m
            })
            .collect();
        let (hiddens, _) = lstm.forward(&steps)?;
        Ok(output.forward(hiddens.last().unwrap())?)
    }

    /// Assemble the gradient bundle in `export_params` order.
    fn bundle_grads(
        &self,
        cnn: CnnGrads,
        out_w: &[Array2<f64>],
        out_b: &[Array1<f64>],
        lstm: Option<(Array2<f64>, Array2<f64>, Array1<f64>)>,
    ) -> ParamBundle {
        let mut bundle = ParamBundle { descriptor: self.config.descriptor(), tensors: vec![] };
        for (k, ((conv, bn), (gw, gb, ggamma, gbeta))) in
            self.blocks.iter().zip(cnn.blocks.iter()).enumerate()
        {
            let p = format!("block{}", k + 1);
            bundle.push(
                &format!("{p}/conv/weights"),
                &[conv.out_channels, conv.in_channels * conv.kernel_width],
                gw.iter().copied().collect(),
            );
            bundle.push(&format!("{p}/conv/bias"), &[conv.out_channels], gb.to_vec());
            bundle.push(&format!("{p}/bn/gamma"), &[bn.channels()], ggamma.to_vec());
            bundle.push(&format!("{p}/bn/beta"), &[bn.channels()], gbeta.to_vec());
            // Running statistics are state, not trainable parameters.
            bundle.push(&format!("{p}/bn/running_mean"), &[bn.channels()], vec![0.0; bn.channels()]);
            bundle.push(&format!("{p}/bn/running_var"), &[bn.channels()], vec![0.0; bn.channels()]);
        }
        bundle.push(
            "feature/weights",
            &[self.feature.out_features(), self.feature.in_features()],
            cnn.feature_w.iter().copied().collect(),
        );
        bundle.push("feature/bias", &[self.feature.out_features()], cnn.feature_b.to_vec());
        if let Some((wx, wh, b)) = lstm {
            bundle.push("head/lstm/wx", &[wx.nrows(), wx.ncols()], wx.iter().copied().collect());
            bundle.push("head/lstm/wh", &[wh.nrows(), wh.ncols()], wh.iter().copied().collect());
            bundle.push("head/lstm/bias", &[b.len()], b.to_vec());
        }
        let w = &out_w[0];
        bundle.push("head/output/weights", &[w.nrows(), w.ncols()], w.iter().copied().collect());
        bundle.push("head/output/bias", &[out_b[0].len()], out_b[0].to_vec());
        bundle
    }
}

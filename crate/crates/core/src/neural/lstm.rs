//! Unidirectional LSTM over fixed-length sequences, batched per time step.
//!
//! Gate order in the stacked parameter matrices is i, f, g, o:
//! i, f, o are sigmoid gates, g is tanh; c_t = f.c_{t-1} + i.g and
//! h_t = o.tanh(c_t), starting from zero hidden and cell state.

use super::NeuralError;
use ndarray::{Array1, Array2};

#[derive(Debug, Clone)]
pub struct Lstm {
    /// Input weights `[4*hidden, input]`.
    pub wx: Array2<f64>,
    /// Recurrent weights `[4*hidden, hidden]`.
    pub wh: Array2<f64>,
    /// Gate biases `[4*hidden]`.
    pub bias: Array1<f64>,
    pub hidden: usize,
}

pub struct LstmGrads {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-step activations saved for backpropagation through time.
pub struct LstmCache {
    pub inputs: Vec<Array2<f64>>,
    pub gates_i: Vec<Array2<f64>>,
    pub gates_f: Vec<Array2<f64>>,
    pub gates_g: Vec<Array2<f64>>,
    pub gates_o: Vec<Array2<f64>>,
    pub cells: Vec<Array2<f64>>,
    pub tanh_cells: Vec<Array2<f64>>,
    pub hiddens: Vec<Array2<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn new(input: usize, hidden: usize) -> Self {
        Lstm {
            wx: Array2::zeros((4 * hidden, input)),
            wh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
            hidden,
        }
    }

    pub fn input_size(&self) -> usize {
        self.wx.ncols()
    }

    /// Forward over a sequence of `[batch, input]` steps; returns every
    /// hidden state `[batch, hidden]` and the BPTT cache.
    pub fn forward(&self, seq: &[Array2<f64>]) -> Result<(Vec<Array2<f64>>, LstmCache), NeuralError> {
        if seq.is_empty() {
            return Err(NeuralError::Argument("empty LSTM input sequence".to_string()));
        }
        let batch = seq[0].nrows();
        for x in seq {
            if x.ncols() != self.input_size() || x.nrows() != batch {
                return Err(NeuralError::Shape(format!(
                    "LSTM step expects [{batch}, {}], got [{}, {}]",
                    self.input_size(),
                    x.nrows(),
                    x.ncols()
                )));
            }
        }
        let hd = self.hidden;
        let mut h = Array2::zeros((batch, hd));
        let mut c = Array2::zeros((batch, hd));
        let mut cache = LstmCache {
            inputs: seq.to_vec(),
            gates_i: Vec::with_capacity(seq.len()),
            gates_f: Vec::with_capacity(seq.len()),
            gates_g: Vec::with_capacity(seq.len()),
            gates_o: Vec::with_capacity(seq.len()),
            cells: Vec::with_capacity(seq.len()),
            tanh_cells: Vec::with_capacity(seq.len()),
            hiddens: Vec::with_capacity(seq.len()),
        };
        let mut outputs = Vec::with_capacity(seq.len());
        for x in seq {
            // [batch, 4H]
            let mut z = x.dot(&self.wx.t()) + h.dot(&self.wh.t());
            z += &self.bias;
            let mut gi = Array2::zeros((batch, hd));
            let mut gf = Array2::zeros((batch, hd));
            let mut gg = Array2::zeros((batch, hd));
            let mut go = Array2::zeros((batch, hd));
            for b in 0..batch {
                for u in 0..hd {
                    gi[(b, u)] = sigmoid(z[(b, u)]);
                    gf[(b, u)] = sigmoid(z[(b, hd + u)]);
                    gg[(b, u)] = z[(b, 2 * hd + u)].tanh();
                    go[(b, u)] = sigmoid(z[(b, 3 * hd + u)]);
                }
            }
            let c_new = &gf * &c + &gi * &gg;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &go * &tanh_c;
            cache.gates_i.push(gi);
            cache.gates_f.push(gf);
            cache.gates_g.push(gg);
            cache.gates_o.push(go);
            cache.cells.push(c_new.clone());
            cache.tanh_cells.push(tanh_c);
            cache.hiddens.push(h_new.clone());
            outputs.push(h_new.clone());
            h = h_new;
            c = c_new;
        }
        Ok((outputs, cache))
    }

    /// Backpropagation through time. `grad_h[t]` is dL/dh_t (zeros where a
    /// step receives no direct loss gradient). Returns per-step input
    /// gradients and parameter gradients.
    pub fn backward(&self, cache: &LstmCache, grad_h: &[Array2<f64>]) -> (Vec<Array2<f64>>, LstmGrads) {
        let steps = cache.inputs.len();
        let batch = cache.inputs[0].nrows();
        let hd = self.hidden;
        let mut grads = LstmGrads {
            wx: Array2::zeros(self.wx.dim()),
            wh: Array2::zeros(self.wh.dim()),
            bias: Array1::zeros(self.bias.len()),
        };
        let mut grad_inputs = vec![Array2::zeros((batch, self.input_size())); steps];
        let mut dh_next = Array2::<f64>::zeros((batch, hd));
        let mut dc_next = Array2::<f64>::zeros((batch, hd));
        for t in (0..steps).rev() {
            let dh = &grad_h[t] + &dh_next;
            let gi = &cache.gates_i[t];
            let gf = &cache.gates_f[t];
            let gg = &cache.gates_g[t];
            let go = &cache.gates_o[t];
            let tanh_c = &cache.tanh_cells[t];
            let c_prev = if t == 0 {
                Array2::zeros((batch, hd))
            } else {
                cache.cells[t - 1].clone()
            };
            let h_prev = if t == 0 {
                Array2::zeros((batch, hd))
            } else {
                cache.hiddens[t - 1].clone()
            };

            let d_o = &dh * tanh_c;
            let mut dc = &dh * go;
            dc.zip_mut_with(tanh_c, |v, &tc| *v *= 1.0 - tc * tc);
            dc += &dc_next;

            let d_i = &dc * gg;
            let d_g = &dc * gi;
            let d_f = &dc * &c_prev;
            dc_next = &dc * gf;

            // Pre-activation gate gradients.
            let mut z = Array2::zeros((batch, 4 * hd));
            for b in 0..batch {
                for u in 0..hd {
                    z[(b, u)] = d_i[(b, u)] * gi[(b, u)] * (1.0 - gi[(b, u)]);
                    z[(b, hd + u)] = d_f[(b, u)] * gf[(b, u)] * (1.0 - gf[(b, u)]);
                    z[(b, 2 * hd + u)] = d_g[(b, u)] * (1.0 - gg[(b, u)] * gg[(b, u)]);
                    z[(b, 3 * hd + u)] = d_o[(b, u)] * go[(b, u)] * (1.0 - go[(b, u)]);
                }
            }
            grads.wx += &z.t().dot(&cache.inputs[t]);
            grads.wh += &z.t().dot(&h_prev);
            grads.bias += &z.sum_axis(ndarray::Axis(0));
            grad_inputs[t] = z.dot(&self.wx);
            dh_next = z.dot(&self.wh);
        }
        (grad_inputs, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_sequence_rejected() {
        let lstm = Lstm::new(3, 4);
        assert!(matches!(lstm.forward(&[]), Err(NeuralError::Argument(_))));
    }

    #[test]
    fn zero_parameters_give_zero_hidden_states() {
        // All gates sit at sigmoid(0) = 0.5 and g = tanh(0) = 0, so c and h
        // stay exactly zero through the recurrence.
        let lstm = Lstm::new(5, 7);
        let seq: Vec<Array2<f64>> = (0..4).map(|i| Array2::from_elem((2, 5), i as f64)).collect();
        let (out, _) = lstm.forward(&seq).unwrap();
        for h in &out {
            assert!(h.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_step_equals_cell_from_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut lstm = Lstm::new(3, 4);
        lstm.wx.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        lstm.wh.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        lstm.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let x = Array2::from_shape_fn((1, 3), |_| rng.gen_range(-1.0..1.0));
        let (out, _) = lstm.forward(std::slice::from_ref(&x)).unwrap();

        // Scalar reference for one step from zero state.
        let hd = 4;
        for u in 0..hd {
            // The forget gate multiplies the zero initial cell state, so it
            // drops out of the single-step reference.
            let mut zi = lstm.bias[u];
            let mut zg = lstm.bias[2 * hd + u];
            let mut zo = lstm.bias[3 * hd + u];
            for k in 0..3 {
                zi += lstm.wx[(u, k)] * x[(0, k)];
                zg += lstm.wx[(2 * hd + u, k)] * x[(0, k)];
                zo += lstm.wx[(3 * hd + u, k)] * x[(0, k)];
            }
            let c = sigmoid(zi) * zg.tanh();
            let h = sigmoid(zo) * c.tanh();
            assert!((out[0][(0, u)] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_reference_over_three_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let input = 2;
        let hd = 3;
        let mut lstm = Lstm::new(input, hd);
        lstm.wx.mapv_inplace(|_| rng.gen_range(-0.4..0.4));
        lstm.wh.mapv_inplace(|_| rng.gen_range(-0.4..0.4));
        lstm.bias.mapv_inplace(|_| rng.gen_range(-0.4..0.4));
        let seq: Vec<Array2<f64>> =
            (0..3).map(|_| Array2::from_shape_fn((1, input), |_| rng.gen_range(-1.0..1.0))).collect();
        let (out, _) = lstm.forward(&seq).unwrap();

        // Independent scalar recurrence.
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for (t, x) in seq.iter().enumerate() {
            let mut h_new = vec![0.0; hd];
            let mut c_new = vec![0.0; hd];
            for u in 0..hd {
                let mut zi = lstm.bias[u];
                let mut zf = lstm.bias[hd + u];
                let mut zg = lstm.bias[2 * hd + u];
                let mut zo = lstm.bias[3 * hd + u];
                for k in 0..input {
                    zi += lstm.wx[(u, k)] * x[(0, k)];
                    zf += lstm.wx[(hd + u, k)] * x[(0, k)];
                    zg += lstm.wx[(2 * hd + u, k)] * x[(0, k)];
                    zo += lstm.wx[(3 * hd + u, k)] * x[(0, k)];
                }
                for k in 0..hd {
                    zi += lstm.wh[(u, k)] * h[k];
                    zf += lstm.wh[(hd + u, k)] * h[k];
                    zg += lstm.wh[(2 * hd + u, k)] * h[k];
                    zo += lstm.wh[(3 * hd + u, k)] * h[k];
                }
                c_new[u] = sigmoid(zf) * c[u] + sigmoid(zi) * zg.tanh();
                h_new[u] = sigmoid(zo) * c_new[u].tanh();
            }
            h = h_new;
            c = c_new;
            for u in 0..hd {
                assert!((out[t][(0, u)] - h[u]).abs() < 1e-12, "step {t} unit {u}");
            }
        }
    }
}

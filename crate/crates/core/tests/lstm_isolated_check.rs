//! Isolated finite-difference check of the LSTM layer backward pass.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepstage::neural::{Lstm, NeuralError, ParamBundle, Parameterized};

#[derive(Clone)]
struct Wrap {
    lstm: Lstm,
}

impl Parameterized for Wrap {
    fn export_params(&self) -> ParamBundle {
        let mut b = ParamBundle::default();
        b.push("wx", &[self.lstm.wx.nrows(), self.lstm.wx.ncols()], self.lstm.wx.iter().copied().collect());
        b.push("wh", &[self.lstm.wh.nrows(), self.lstm.wh.ncols()], self.lstm.wh.iter().copied().collect());
        b.push("bias", &[self.lstm.bias.len()], self.lstm.bias.to_vec());
        b
    }

    fn import_params(&mut self, bundle: &ParamBundle) -> Result<(), NeuralError> {
        self.lstm.wx = Array2::from_shape_vec(self.lstm.wx.dim(), bundle.tensors[0].values.clone()).unwrap();
        self.lstm.wh = Array2::from_shape_vec(self.lstm.wh.dim(), bundle.tensors[1].values.clone()).unwrap();
        self.lstm.bias = ndarray::Array1::from_vec(bundle.tensors[2].values.clone());
        Ok(())
    }
}

/// Loss: sum of squares of the final hidden state (plus 0.3 * first step's
/// hidden to exercise intermediate grad_h).
fn loss_of(w: &Wrap, seq: &[Array2<f64>]) -> f64 {
    let (h, _) = w.lstm.forward(seq).unwrap();
    let last = h.last().unwrap();
    let first = &h[0];
    last.iter().map(|v| v * v).sum::<f64>() + 0.3 * first.iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn lstm_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut lstm = Lstm::new(4, 6);
    lstm.wx.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    lstm.wh.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    lstm.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    let wrap = Wrap { lstm };
    let seq: Vec<Array2<f64>> =
        (0..3).map(|_| Array2::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0))).collect();

    let (h, cache) = wrap.lstm.forward(&seq).unwrap();
    let mut grad_h: Vec<Array2<f64>> = h.iter().map(|x| Array2::zeros(x.dim())).collect();
    grad_h[2] = h[2].mapv(|v| 2.0 * v);
    grad_h[0] = h[0].mapv(|v| 0.6 * v);
    let (_, grads) = wrap.lstm.backward(&cache, &grad_h);

    let mut analytic = ParamBundle::default();
    analytic.push("wx", &[grads.wx.nrows(), grads.wx.ncols()], grads.wx.iter().copied().collect());
    analytic.push("wh", &[grads.wh.nrows(), grads.wh.ncols()], grads.wh.iter().copied().collect());
    analytic.push("bias", &[grads.bias.len()], grads.bias.to_vec());

    let report = sleepstage::neural::gradient_check(&wrap, &analytic, |w| loss_of(w, &seq), 1e-5, None);
    println!("LSTM isolated: checked {}, max rel {:.3e}, worst {:?}", report.checked, report.max_rel_error, report.worst);
    assert!(report.max_rel_error < 1e-4, "worst {:?}", report.worst);
}

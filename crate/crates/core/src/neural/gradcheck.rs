//! Central finite-difference gradient checking.
//!
//! For a parameterized model and a deterministic loss closure, compares the
//! analytic gradient bundle against (L(θ+h) - L(θ-h)) / 2h with
//! h = eps * max(1, |θ|), reporting
//! max |g_a - g_n| / max(|g_a| + |g_n|, 1e-8) over the checked parameters.

use super::params::{ParamBundle, Parameterized};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (tensor name, flat index, analytic, numeric) of the worst parameter.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Check `analytic` (same tensor order as `model.export_params()`) against
/// central differences of `eval`. `max_per_tensor = None` checks every
/// parameter; `Some(k)` checks an evenly strided sample of k per tensor,
/// always including the first and last entries.
pub fn gradient_check<M, F>(
    model: &M,
    analytic: &ParamBundle,
    eval: F,
    eps: f64,
    max_per_tensor: Option<usize>,
) -> GradCheckReport
where
    M: Parameterized + Clone,
    F: Fn(&M) -> f64,
{
    let params = model.export_params();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut worst = None;
    for (ti, tensor) in params.tensors.iter().enumerate() {
        let len = tensor.values.len();
        let indices: Vec<usize> = match max_per_tensor {
            Some(k) if len > k && k >= 2 => {
                let mut v: Vec<usize> =
                    (0..k).map(|i| i * (len - 1) / (k - 1)).collect();
                v.dedup();
                v
            }
            _ => (0..len).collect(),
        };
        for idx in indices {
            let theta = tensor.values[idx];
            let h = eps * theta.abs().max(1.0);
            let mut plus = model.clone();
            let mut bundle = params.clone();
            bundle.tensors[ti].values[idx] = theta + h;
            plus.import_params(&bundle).expect("congruent bundle");
            let loss_plus = eval(&plus);
            let mut minus = model.clone();
            bundle.tensors[ti].values[idx] = theta - h;
            minus.import_params(&bundle).expect("congruent bundle");
            let loss_minus = eval(&minus);
            let numeric = (loss_plus - loss_minus) / (2.0 * h);
            let g = analytic.tensors[ti].values[idx];
            let rel = (g - numeric).abs() / (g.abs() + numeric.abs()).max(1e-8);
            checked += 1;
            if rel > max_rel {
                max_rel = rel;
                worst = Some((tensor.name.clone(), idx, g, numeric));
            }
        }
    }
    GradCheckReport { max_rel_error: max_rel, checked, worst }
}

#[cfg(test)]
mod tests {
    use super::super::{softmax_cross_entropy_batch, Dense, NeuralError};
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// dense -> softmax -> cross-entropy toy network.
    #[derive(Clone)]
    struct Toy {
        dense: Dense,
    }

    impl Parameterized for Toy {
        fn export_params(&self) -> ParamBundle {
            let mut b = ParamBundle::default();
            b.push("dense/weights", &[5, 4], self.dense.weights.iter().copied().collect());
            b.push("dense/bias", &[5], self.dense.bias.to_vec());
            b
        }

        fn import_params(&mut self, bundle: &ParamBundle) -> Result<(), NeuralError> {
            self.dense.weights =
                Array2::from_shape_vec((5, 4), bundle.tensors[0].values.clone()).unwrap();
            self.dense.bias = ndarray::Array1::from_vec(bundle.tensors[1].values.clone());
            Ok(())
        }
    }

    #[test]
    fn toy_network_gradient_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut toy = Toy { dense: Dense::new(4, 5) };
        toy.dense.weights.mapv_inplace(|_| rng.gen_range(-0.8..0.8));
        toy.dense.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        let x = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let targets = [0usize, 3, 2];

        // Analytic gradients via the layer backward passes.
        let logits = toy.dense.forward(&x).unwrap();
        let (_, cache) = softmax_cross_entropy_batch(&logits, &targets).unwrap();
        let grad_logits = super::super::ops::softmax_cross_entropy_backward(&cache);
        let (_, dg) = toy.dense.backward(&x, &grad_logits);
        let mut analytic = ParamBundle::default();
        analytic.push("dense/weights", &[5, 4], dg.weights.iter().copied().collect());
        analytic.push("dense/bias", &[5], dg.bias.to_vec());

        let report = gradient_check(
            &toy,
            &analytic,
            |m| {
                let logits = m.dense.forward(&x).unwrap();
                softmax_cross_entropy_batch(&logits, &targets).unwrap().0
            },
            1e-5,
            None,
        );
        assert!(report.max_rel_error <= 1e-6, "max rel {:?}", report.worst);
        assert_eq!(report.checked, 25);
    }
}

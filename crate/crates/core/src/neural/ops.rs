//! Stateless operations: ReLU, width-halving average pool, dropout, softmax
//! and cross-entropy.

use super::{NeuralError, Tensor3};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn relu(x: &Tensor3) -> Tensor3 {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_inplace(x: &mut Tensor3) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// ReLU gradient given the layer *output* (y > 0 iff the unit was active;
/// the derivative at exactly 0 is taken as 0).
pub fn relu_backward_mask(output: &Tensor3, grad_out: &Tensor3) -> Tensor3 {
    let mut g = grad_out.clone();
    g.zip_mut_with(output, |gv, &y| {
        if y <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

/// Average pool along the width only: pool size 1x2, stride 2. An odd
/// trailing column is dropped.
pub fn avg_pool2(x: &Tensor3) -> Tensor3 {
    let (c, h, w) = x.dim();
    let wo = w / 2;
    let mut out = Tensor3::zeros((c, h, wo));
    let src = x.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    for row in 0..c * h {
        let s = &src[row * w..row * w + 2 * wo];
        let d = &mut dst[row * wo..(row + 1) * wo];
        for t in 0..wo {
            d[t] = 0.5 * (s[2 * t] + s[2 * t + 1]);
        }
    }
    out
}

/// Gradient of [`avg_pool2`]: each input in a pooled pair receives half the
/// output gradient; a dropped trailing column receives zero.
pub fn avg_pool2_backward(input_width: usize, grad_out: &Tensor3) -> Tensor3 {
    let (c, h, wo) = grad_out.dim();
    let w = input_width;
    let mut g = Tensor3::zeros((c, h, w));
    let src = grad_out.as_slice().expect("standard layout");
    let dst = g.as_slice_mut().expect("standard layout");
    for row in 0..c * h {
        let s = &src[row * wo..(row + 1) * wo];
        let d = &mut dst[row * w..row * w + 2 * wo];
        for t in 0..wo {
            let gv = 0.5 * s[t];
            d[2 * t] = gv;
            d[2 * t + 1] = gv;
        }
    }
    g
}

/// Inverted dropout: kept units are scaled by 1/(1-p) so inference is the
/// identity. Returns the output and the scaled mask for backward.
pub fn dropout_train(
    x: &Array2<f64>,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Array2<f64>), NeuralError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NeuralError::Argument(format!("dropout probability {p} outside [0, 1)")));
    }
    let keep = 1.0 - p;
    let mut mask = Array2::zeros(x.dim());
    for m in mask.iter_mut() {
        *m = if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep };
    }
    Ok((x * &mask, mask))
}

pub fn dropout_infer(x: &Array2<f64>) -> Array2<f64> {
    x.clone()
}

/// Numerically stable softmax over each row.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Cross-entropy of a single probability vector against a class index:
/// -ln p[target], with p clamped below at 1e-12.
pub fn cross_entropy(p: &Array1<f64>, target: usize) -> Result<f64, NeuralError> {
    if target >= p.len() {
        return Err(NeuralError::Argument(format!(
            "target {target} outside class range 0..{}",
            p.len()
        )));
    }
    Ok(-(p[target].max(1e-12)).ln())
}

pub struct SoftmaxCeCache {
    pub probs: Array2<f64>,
    pub targets: Vec<usize>,
}

/// Batched softmax + mean cross-entropy. Returns the mean loss and the cache
/// needed for the combined backward (probs - onehot) / batch.
pub fn softmax_cross_entropy_batch(
    logits: &Array2<f64>,
    targets: &[usize],
) -> Result<(f64, SoftmaxCeCache), NeuralError> {
    if logits.nrows() != targets.len() {
        return Err(NeuralError::Shape(format!(
            "{} logit rows vs {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let probs = softmax(logits);
    let mut loss = 0.0;
    for (row, &t) in probs.rows().into_iter().zip(targets) {
        if t >= row.len() {
            return Err(NeuralError::Argument(format!("target {t} outside class range")));
        }
        loss += -(row[t].max(1e-12)).ln();
    }
    loss /= targets.len() as f64;
    Ok((loss, SoftmaxCeCache { probs, targets: targets.to_vec() }))
}

/// Gradient of the mean cross-entropy w.r.t. the logits.
pub fn softmax_cross_entropy_backward(cache: &SoftmaxCeCache) -> Array2<f64> {
    let batch = cache.targets.len() as f64;
    let mut g = cache.probs.clone();
    for (mut row, &t) in g.rows_mut().into_iter().zip(&cache.targets) {
        row[t] -= 1.0;
        row.mapv_inplace(|v| v / batch);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor3::from_shape_vec((1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.as_slice().unwrap(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn pool_hand_case() {
        let x = Tensor3::from_shape_vec((1, 1, 4), vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let y = avg_pool2(&x);
        assert_eq!(y.as_slice().unwrap(), &[2.0, 6.0]);
    }

    #[test]
    fn pool_halving_chain() {
        let x = Tensor3::zeros((1, 4, 3000));
        let y = avg_pool2(&avg_pool2(&avg_pool2(&x)));
        assert_eq!(y.dim(), (1, 4, 375));
    }

    #[test]
    fn pool_drops_odd_trailing_column() {
        let x = Tensor3::from_shape_vec((1, 1, 5), vec![2.0, 4.0, 6.0, 8.0, 100.0]).unwrap();
        let y = avg_pool2(&x);
        assert_eq!(y.as_slice().unwrap(), &[3.0, 7.0]);
    }

    #[test]
    fn pool_of_relu_nonnegative() {
        let x = Tensor3::from_shape_vec(
            (2, 1, 6),
            vec![-3.0, 1.0, -0.5, 2.0, 4.0, -9.0, 0.0, 0.5, -2.0, 7.0, -1.0, 1.0],
        )
        .unwrap();
        let y = avg_pool2(&relu(&x));
        assert!(y.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dropout_infer_is_identity() {
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        assert_eq!(dropout_infer(&x), x);
    }

    #[test]
    fn dropout_train_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_elem((100, 50), 1.0);
        let (y, mask) = dropout_train(&x, 0.5, &mut rng).unwrap();
        for (&yv, &mv) in y.iter().zip(mask.iter()) {
            assert!(yv == 0.0 || (yv - 2.0).abs() < 1e-15);
            assert_eq!(yv, mv);
        }
        let kept = y.iter().filter(|&&v| v > 0.0).count();
        let frac = kept as f64 / y.len() as f64;
        assert!((frac - 0.5).abs() < 0.05, "kept fraction {frac}");
    }

    #[test]
    fn dropout_rejects_invalid_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::zeros((2, 2));
        assert!(dropout_train(&x, 1.0, &mut rng).is_err());
        assert!(dropout_train(&x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&array![[0.0, 0.0, 0.0, 0.0, 0.0]]);
        for &v in p.row(0) {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_positive() {
        let p = softmax(&array![[100.0, -90.0, 3.0, 7.5, 0.1], [300.0, 300.0, -300.0, 0.0, 2.0]]);
        for row in p.rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let certain = array![1.0, 0.0, 0.0, 0.0, 0.0];
        assert!(cross_entropy(&certain, 0).unwrap().abs() < 1e-15);
        let uniform = Array1::from_elem(5, 0.2);
        assert!((cross_entropy(&uniform, 3).unwrap() - 5f64.ln()).abs() < 1e-12);
        let tiny = array![1e-12, 0.5, 0.5 - 1e-12, 0.0, 0.0];
        let loss = cross_entropy(&tiny, 0).unwrap();
        assert!((loss - 27.631).abs() < 1e-2, "clamped loss {loss}");
        assert!(cross_entropy(&uniform, 9).is_err());
    }

    #[test]
    fn batched_ce_matches_scalar() {
        let logits = array![[0.3, -0.2, 1.0, 0.0, -1.0], [2.0, 0.0, 0.0, 0.5, 0.1]];
        let (loss, cache) = softmax_cross_entropy_batch(&logits, &[2, 0]).unwrap();
        let p = softmax(&logits);
        let expected = (cross_entropy(&p.row(0).to_owned(), 2).unwrap()
            + cross_entropy(&p.row(1).to_owned(), 0).unwrap())
            / 2.0;
        assert!((loss - expected).abs() < 1e-12);
        let g = softmax_cross_entropy_backward(&cache);
        // Gradient rows sum to zero (softmax simplex tangency).
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_onehot_gives_zero_logit_gradient() {
        // Drive the softmax to (numerically) one-hot outputs.
        let logits = array![[60.0, 0.0, 0.0, 0.0, 0.0]];
        let (loss, cache) = softmax_cross_entropy_batch(&logits, &[0]).unwrap();
        assert!(loss < 1e-12);
        let g = softmax_cross_entropy_backward(&cache);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}

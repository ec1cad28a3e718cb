//! 30 s segmentation and Gaussian standardization of epoch patterns.

use super::{DspError, EPOCH_SAMPLES};
use ndarray::Array2;

/// One standardized input pattern: 4 rows (EEG1, EEG2, EMG, EOG) by
/// 3000L columns at 100 Hz, with its 1-based epoch index.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPattern {
    pub values: Array2<f64>,
    pub epoch_index: usize,
}

/// Which window the standardization statistics are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StandardizeScope {
    /// Per channel over the whole pattern window (default).
    #[default]
    PerChannel,
    /// Pooled over all four channels of the window; kept for comparison.
    Pooled,
}

/// Cut equal-length 100 Hz channels into raw (pre-standardization) 4x3000
/// matrices. A trailing partial epoch is discarded; inputs shorter than one
/// epoch yield an empty list with a warning.
pub fn segment_epochs(channels: &[&[f64]; 4]) -> Result<Vec<Array2<f64>>, DspError> {
    let len = channels[0].len();
    for c in channels.iter() {
        if c.len() != len {
            return Err(DspError::LengthMismatch { a: len, b: c.len() });
        }
    }
    let m = len / EPOCH_SAMPLES;
    if m == 0 {
        log::warn!("input of {len} samples is shorter than one 30 s epoch; no epochs produced");
        return Ok(Vec::new());
    }
    let mut epochs = Vec::with_capacity(m);
    for k in 0..m {
        let mut mat = Array2::zeros((4, EPOCH_SAMPLES));
        for (row, ch) in channels.iter().enumerate() {
            let start = k * EPOCH_SAMPLES;
            for (col, &v) in ch[start..start + EPOCH_SAMPLES].iter().enumerate() {
                mat[(row, col)] = v;
            }
        }
        epochs.push(mat);
    }
    Ok(epochs)
}

/// Gaussian standardization, per channel over the whole pattern window:
/// row <- (row - mean) / std with the population (1/N) standard deviation.
/// Constant rows (sigma < 1e-12) map to zeros.
pub fn standardize(raw: &Array2<f64>) -> Result<Array2<f64>, DspError> {
    standardize_scoped(raw, StandardizeScope::PerChannel)
}

pub fn standardize_scoped(raw: &Array2<f64>, scope: StandardizeScope) -> Result<Array2<f64>, DspError> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(DspError::NonFinite);
    }
    let mut out = raw.clone();
    match scope {
        StandardizeScope::PerChannel => {
            for mut row in out.rows_mut() {
                zscore(row.as_slice_mut().expect("row-major layout"));
            }
        }
        StandardizeScope::Pooled => {
            zscore(out.as_slice_mut().expect("row-major layout"));
        }
    }
    Ok(out)
}

fn zscore(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn channels_of_len(len: usize) -> [Vec<f64>; 4] {
        [
            (0..len).map(|i| i as f64).collect(),
            (0..len).map(|i| (i as f64 * 0.01).sin()).collect(),
            vec![1.0; len],
            vec![-2.0; len],
        ]
    }

    #[test]
    fn exact_division_yields_all_epochs() {
        let ch = channels_of_len(90_000);
        let refs: [&[f64]; 4] = [&ch[0], &ch[1], &ch[2], &ch[3]];
        let epochs = segment_epochs(&refs).unwrap();
        assert_eq!(epochs.len(), 30);
        assert_eq!(epochs[0].dim(), (4, 3000));
    }

    #[test]
    fn trailing_partial_epoch_dropped() {
        let ch = channels_of_len(91_000);
        let refs: [&[f64]; 4] = [&ch[0], &ch[1], &ch[2], &ch[3]];
        let epochs = segment_epochs(&refs).unwrap();
        assert_eq!(epochs.len(), 30);
    }

    #[test]
    fn sub_epoch_input_yields_empty() {
        let ch = channels_of_len(2999);
        let refs: [&[f64]; 4] = [&ch[0], &ch[1], &ch[2], &ch[3]];
        assert!(segment_epochs(&refs).unwrap().is_empty());
    }

    #[test]
    fn concatenated_epochs_reproduce_input_prefix() {
        let ch = channels_of_len(7000);
        let refs: [&[f64]; 4] = [&ch[0], &ch[1], &ch[2], &ch[3]];
        let epochs = segment_epochs(&refs).unwrap();
        assert_eq!(epochs.len(), 2);
        for row in 0..4 {
            let rebuilt: Vec<f64> = epochs
                .iter()
                .flat_map(|e| e.row(row).to_vec())
                .collect();
            assert_eq!(rebuilt[..], ch[row][..6000]);
        }
    }

    #[test]
    fn standardize_hand_case() {
        let raw = array![[1.0, 2.0, 3.0, 4.0]];
        let mut mat = Array2::zeros((4, 4));
        for r in 0..4 {
            for c in 0..4 {
                mat[(r, c)] = raw[(0, c)];
            }
        }
        let z = standardize(&mat).unwrap();
        let expected = [-1.3416, -0.4472, 0.4472, 1.3416];
        for c in 0..4 {
            assert!((z[(0, c)] - expected[c]).abs() < 1e-4, "col {c}: {}", z[(0, c)]);
        }
    }

    #[test]
    fn standardized_rows_have_zero_mean_unit_std() {
        let mut mat = Array2::zeros((4, 3000));
        for r in 0..4 {
            for c in 0..3000 {
                mat[(r, c)] = ((r + 1) as f64 * c as f64 * 0.013).sin() * 40.0 + r as f64;
            }
        }
        let z = standardize(&mat).unwrap();
        for row in z.rows() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_row_maps_to_zeros() {
        let mut mat = Array2::zeros((4, 100));
        for c in 0..100 {
            mat[(0, c)] = 7.5;
            mat[(1, c)] = (c as f64).sin();
            mat[(2, c)] = (c as f64 * 0.3).cos();
            mat[(3, c)] = c as f64;
        }
        let z = standardize(&mat).unwrap();
        assert!(z.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_invariance_per_channel() {
        let mut mat = Array2::zeros((4, 500));
        for r in 0..4 {
            for c in 0..500 {
                mat[(r, c)] = ((r * 31 + c) as f64 * 0.017).sin() * 12.0;
            }
        }
        let z1 = standardize(&mat).unwrap();
        let mut scaled = mat.clone();
        let gains = [2.5, 0.3, 10.0, 1.7];
        let offsets = [5.0, -3.0, 0.25, 100.0];
        for r in 0..4 {
            for c in 0..500 {
                scaled[(r, c)] = gains[r] * scaled[(r, c)] + offsets[r];
            }
        }
        let z2 = standardize(&scaled).unwrap();
        for (a, b) in z1.iter().zip(z2.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut mat = Array2::zeros((4, 10));
        mat[(2, 3)] = f64::NAN;
        assert!(matches!(standardize(&mat), Err(DspError::NonFinite)));
    }

    #[test]
    fn pooled_scope_differs_from_per_channel() {
        let mut mat = Array2::zeros((4, 100));
        for c in 0..100 {
            mat[(0, c)] = (c as f64 * 0.2).sin() * 100.0;
            mat[(1, c)] = (c as f64 * 0.2).sin();
            mat[(2, c)] = (c as f64 * 0.3).cos() * 5.0;
            mat[(3, c)] = (c as f64 * 0.1).cos() * 2.0;
        }
        let per = standardize_scoped(&mat, StandardizeScope::PerChannel).unwrap();
        let pooled = standardize_scoped(&mat, StandardizeScope::Pooled).unwrap();
        // Pooled stats keep the amplitude disparity between rows.
        let amp = |m: &Array2<f64>, r: usize| m.row(r).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((amp(&per, 0) - amp(&per, 1)).abs() < 0.2);
        assert!(amp(&pooled, 0) > 10.0 * amp(&pooled, 1));
    }
}

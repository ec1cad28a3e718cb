//! Inference: feature extraction, posterior classification and
//! whole-recording scoring into hypnograms.

use super::model::{Head, StagingModel};
use super::{ModelKind, StagingError};
use crate::dsp::{prepare_recording, standardize, FilterConfig, PreparedRecording};
use crate::edfio::DerivedRecording;
use crate::neural::{softmax, ConvScratch, NeuralError};
use crate::stage::{Hypnogram, Stage};
use ndarray::{Array1, Array2};

/// Epoch indices (1-based) feeding the decision for epoch `k`:
/// j from k - ceil((L-1)/2) to k + floor((L-1)/2), clamped to [1, M].
/// F(k) always sits at position ceil((L-1)/2) (0-based) in the result.
pub fn sequence_indices(k: usize, l: usize, m: usize) -> Result<Vec<usize>, StagingError> {
    if k == 0 || k > m {
        return Err(StagingError::Argument(format!("epoch index {k} outside 1..={m}")));
    }
    if l == 0 {
        return Err(StagingError::Argument("sequence length must be >= 1".to_string()));
    }
    let lead = l / 2; // ceil((L-1)/2)
    let lag = (l - 1) / 2; // floor((L-1)/2)
    let k = k as isize;
    Ok(((k - lead as isize)..=(k + lag as isize))
        .map(|j| j.clamp(1, m as isize) as usize)
        .collect())
}

/// Gather the L feature vectors for epoch `k` from an M x feature matrix.
pub fn build_sequence(
    features: &Array2<f64>,
    k: usize,
    l: usize,
) -> Result<Vec<Array1<f64>>, StagingError> {
    let m = features.nrows();
    let indices = sequence_indices(k, l, m)?;
    Ok(indices.iter().map(|&j| features.row(j - 1).to_owned()).collect())
}

/// CNN feature vector of one standardized pattern: the feature dense layer
/// output, pre-activation, as routed to the LSTM.
pub fn cnn_features(model: &StagingModel, pattern: &Array2<f64>) -> Result<Array1<f64>, StagingError> {
    model.require_infer()?;
    let mut scratch = ConvScratch::new();
    let f = model.cnn_forward_infer(std::slice::from_ref(pattern), &mut scratch)?;
    Ok(f.row(0).to_owned())
}

/// CNN-only posteriors for one standardized 4 x (3000 L) pattern.
pub fn cnn_classify(model: &StagingModel, pattern: &Array2<f64>) -> Result<[f64; 5], StagingError> {
    model.require_infer()?;
    if model.config.kind != ModelKind::CnnOnly {
        return Err(StagingError::Config("cnn_classify requires a CNN-only model".to_string()));
    }
    let mut scratch = ConvScratch::new();
    let features = model.cnn_forward_infer(std::slice::from_ref(pattern), &mut scratch)?;
    let relu_f = features.mapv(|v| v.max(0.0));
    let output = match &model.head {
        Head::CnnOnly { output } => output,
        _ => unreachable!(),
    };
    let probs = softmax(&output.forward(&relu_f)?);
    Ok(row5(&probs, 0))
}

/// CNN-LSTM posteriors for one L x feature sequence; the output layer reads
/// the hidden state of the final step.
pub fn lstm_classify(model: &StagingModel, sequence: &[Array1<f64>]) -> Result<[f64; 5], StagingError> {
    model.require_infer()?;
    if sequence.len() != model.config.sequence_len {
        return Err(StagingError::Neural(NeuralError::Shape(format!(
            "sequence length {} does not match configured L = {}",
            sequence.len(),
            model.config.sequence_len
        ))));
    }
    let mut features = Array2::zeros((sequence.len(), model.config.feature_size));
    for (i, f) in sequence.iter().enumerate() {
        if f.len() != model.config.feature_size {
            return Err(StagingError::Neural(NeuralError::Shape(format!(
                "feature vector length {} != {}",
                f.len(),
                model.config.feature_size
            ))));
        }
        features.row_mut(i).assign(f);
    }
    let indices: Vec<usize> = (0..sequence.len()).collect();
    let logits = model.lstm_logits(&features, std::slice::from_ref(&indices))?;
    let probs = softmax(&logits);
    Ok(row5(&probs, 0))
}

fn row5(m: &Array2<f64>, row: usize) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (i, v) in m.row(row).iter().enumerate().take(5) {
        out[i] = *v;
    }
    out
}

/// Argmax with ties broken by the fixed stage order W < N1 < N2 < N3 < R.
pub fn posterior_argmax(p: &[f64; 5]) -> Stage {
    let mut best = 0usize;
    for i in 1..5 {
        if p[i] > p[best] {
            best = i;
        }
    }
    Stage::from_index(best).unwrap()
}

/// A scored recording: the hypnogram plus per-epoch posteriors.
#[derive(Debug, Clone)]
pub struct ScoredRecording {
    pub hypnogram: Hypnogram,
    pub posteriors: Vec<[f64; 5]>,
}

const SCORE_CHUNK: usize = 50;

/// Score a homogenized recording. For CNN-only models with L > 1, the raw
/// neighbor epochs (clamped at the edges) are concatenated along the width
/// and standardized over the whole 4 x (3000 L) window; for CNN-LSTM, each
/// epoch is standardized and featurized once, then sequences are assembled.
pub fn score_prepared(
    model: &StagingModel,
    prepared: &PreparedRecording,
) -> Result<ScoredRecording, StagingError> {
    model.require_infer()?;
    let m = prepared.epoch_count();
    let l = model.config.sequence_len;
    let mut scratch = ConvScratch::new();
    let mut posteriors: Vec<[f64; 5]> = Vec::with_capacity(m);

    match model.config.kind {
        ModelKind::CnnOnly => {
            let output = match &model.head {
                Head::CnnOnly { output } => output,
                _ => unreachable!(),
            };
            let mut k = 1usize;
            while k <= m {
                let hi = (k + SCORE_CHUNK - 1).min(m);
                let mut patterns = Vec::with_capacity(hi - k + 1);
                for kk in k..=hi {
                    patterns.push(window_pattern(prepared, kk, l)?);
                }
                let features = model.cnn_forward_infer(&patterns, &mut scratch)?;
                let relu_f = features.mapv(|v| v.max(0.0));
                let probs = softmax(&output.forward(&relu_f)?);
                for i in 0..probs.nrows() {
                    posteriors.push(row5(&probs, i));
                }
                k = hi + 1;
            }
        }
        ModelKind::CnnLstm => {
            // Featurize every epoch once, then run sequences.
            let mut features = Array2::zeros((m, model.config.feature_size));
            let mut k = 0usize;
            while k < m {
                let hi = (k + SCORE_CHUNK).min(m);
                let patterns: Vec<Array2<f64>> = (k..hi)
                    .map(|i| standardize(&prepared.raw_epochs[i]))
                    .collect::<Result<_, _>>()?;
                let f = model.cnn_forward_infer(&patterns, &mut scratch)?;
                for (local, row) in f.rows().into_iter().enumerate() {
                    features.row_mut(k + local).assign(&row);
                }
                k = hi;
            }
            let mut k = 1usize;
            while k <= m {
                let hi = (k + SCORE_CHUNK - 1).min(m);
                let sequences: Vec<Vec<usize>> = (k..=hi)
                    .map(|kk| sequence_indices(kk, l, m).map(|v| v.iter().map(|j| j - 1).collect()))
                    .collect::<Result<_, _>>()?;
                let logits = model.lstm_logits(&features, &sequences)?;
                let probs = softmax(&logits);
                for i in 0..probs.nrows() {
                    posteriors.push(row5(&probs, i));
                }
                k = hi + 1;
            }
        }
    }

    let stages = posteriors.iter().map(|p| Some(posterior_argmax(p))).collect();
    Ok(ScoredRecording { hypnogram: Hypnogram::new(stages), posteriors })
}

/// Standardize the raw epoch `j` (1-based) of a prepared recording.
pub(crate) fn standardized_epoch(
    prepared: &PreparedRecording,
    j: usize,
) -> Result<Array2<f64>, StagingError> {
    Ok(standardize(&prepared.raw_epochs[j - 1])?)
}

/// Concatenate the raw (pre-standardization) epochs of the clamped window
/// around `k` and standardize over the whole window.
pub(crate) fn window_pattern(
    prepared: &PreparedRecording,
    k: usize,
    l: usize,
) -> Result<Array2<f64>, StagingError> {
    let m = prepared.epoch_count();
    let indices = sequence_indices(k, l, m)?;
    let epoch_w = prepared.raw_epochs[0].ncols();
    let mut window = Array2::zeros((4, epoch_w * l));
    for (pos, &j) in indices.iter().enumerate() {
        let src = &prepared.raw_epochs[j - 1];
        for r in 0..4 {
            for c in 0..epoch_w {
                window[(r, pos * epoch_w + c)] = src[(r, c)];
            }
        }
    }
    Ok(standardize(&window)?)
}

/// Full scoring pipeline from a montage-derived recording. Whether the
/// filter pipeline runs is decided by the model variant (the `_F_` configs);
/// `filter` supplies its parameters (mains frequency, EMG cut-off, ECG use).
pub fn score_recording_detailed(
    model: &StagingModel,
    derived: &DerivedRecording,
    filter: &FilterConfig,
) -> Result<ScoredRecording, StagingError> {
    let mut cfg = filter.clone();
    cfg.enabled = model.config.filtering;
    let prepared = prepare_recording(derived, &cfg)?;
    score_prepared(model, &prepared)
}

pub fn score_recording(
    model: &StagingModel,
    derived: &DerivedRecording,
    filter: &FilterConfig,
) -> Result<Hypnogram, StagingError> {
    Ok(score_recording_detailed(model, derived, filter)?.hypnogram)
}

//! The 14 staging architecture variants: configuration nomenclature, model
//! assembly, epoch sequence construction and whole-recording scoring.

mod engine;
mod model;
mod score;

pub use engine::{BatchInput, TrainStep};
pub use model::{build_model, Head, StagingModel};
pub use score::{
    build_sequence, cnn_classify, cnn_features, lstm_classify, posterior_argmax, score_prepared,
    score_recording, score_recording_detailed, sequence_indices, ScoredRecording,
};
pub(crate) use score::{standardized_epoch, window_pattern};

use crate::dsp::DspError;
use crate::neural::NeuralError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StagingError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    CnnOnly,
    CnnLstm,
}

/// Architecture configuration. The named variants fix everything except
/// `epoch_width` and `kernel_width`, which tests may reduce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Sequence length L: epochs per decision window.
    pub sequence_len: usize,
    /// Whether the optional pre-processing filter pipeline is applied.
    pub filtering: bool,
    pub blocks: usize,
    pub base_filters: usize,
    pub feature_size: usize,
    pub lstm_hidden: usize,
    pub classes: usize,
    pub epoch_width: usize,
    pub kernel_width: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, sequence_len: usize, filtering: bool) -> Self {
        ModelConfig {
            kind,
            sequence_len,
            filtering,
            blocks: 3,
            base_filters: 8,
            feature_size: 50,
            lstm_hidden: 100,
            classes: 5,
            epoch_width: 3000,
            kernel_width: 100,
        }
    }

    /// Parse one of the 14 variant names (`CNN_1` .. `CNN_LSTM_F_7`).
    pub fn from_name(name: &str) -> Result<ModelConfig, StagingError> {
        let rest = name.strip_prefix("CNN").ok_or_else(|| Self::bad_name(name))?;
        let (kind, rest) = match rest.strip_prefix("_LSTM") {
            Some(r) => (ModelKind::CnnLstm, r),
            None => (ModelKind::CnnOnly, rest),
        };
        let (filtering, rest) = match rest.strip_prefix("_F") {
            Some(r) => (true, r),
            None => (false, rest),
        };
        let l: usize = rest
            .strip_prefix('_')
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Self::bad_name(name))?;
        let config = ModelConfig::new(kind, l, filtering);
        config.validate()?;
        Ok(config)
    }

    fn bad_name(name: &str) -> StagingError {
        StagingError::Config(format!(
            "unknown configuration {name:?}; valid names: {}",
            ALL_CONFIG_NAMES.join(", ")
        ))
    }

    pub fn validate(&self) -> Result<(), StagingError> {
        if ![1, 3, 5, 7].contains(&self.sequence_len) {
            return Err(StagingError::Config(format!(
                "sequence length {} not in {{1, 3, 5, 7}}",
                self.sequence_len
            )));
        }
        if self.kind == ModelKind::CnnLstm && self.sequence_len < 3 {
            return Err(Self::bad_name(&self.name()));
        }
        if self.blocks == 0 || self.base_filters == 0 || self.classes == 0 {
            return Err(StagingError::Config("degenerate architecture sizes".to_string()));
        }
        if self.width_trace().last().copied().unwrap_or(0) == 0 {
            return Err(StagingError::Config(format!(
                "input width {} collapses to zero after {} pooling stages",
                self.cnn_input_width(),
                self.blocks
            )));
        }
        Ok(())
    }

    /// Canonical variant name per the CNN(_LSTM)?(_F)?_L nomenclature.
    pub fn name(&self) -> String {
        let mut s = String::from("CNN");
        if self.kind == ModelKind::CnnLstm {
            s.push_str("_LSTM");
        }
        if self.filtering {
            s.push_str("_F");
        }
        s.push_str(&format!("_{}", self.sequence_len));
        s
    }

    /// Width of the CNN input pattern: 3000 L for CNN-only, 3000 per epoch
    /// for CNN-LSTM (whose sequence dimension lives in the LSTM).
    pub fn cnn_input_width(&self) -> usize {
        match self.kind {
            ModelKind::CnnOnly => self.epoch_width * self.sequence_len,
            ModelKind::CnnLstm => self.epoch_width,
        }
    }

    /// Widths after the input and each operational block's pooling.
    pub fn width_trace(&self) -> Vec<usize> {
        let mut w = self.cnn_input_width();
        let mut trace = vec![w];
        for _ in 0..self.blocks {
            w /= 2;
            trace.push(w);
        }
        trace
    }

    /// Filter counts per block: base doubled each block (8, 16, 32).
    pub fn channel_trace(&self) -> Vec<usize> {
        (0..self.blocks).map(|k| self.base_filters << k).collect()
    }

    pub fn flatten_size(&self) -> usize {
        let final_w = *self.width_trace().last().unwrap();
        let final_c = *self.channel_trace().last().unwrap();
        final_c * 4 * final_w
    }

    /// Serialized checkpoint descriptor.
    pub fn descriptor(&self) -> String {
        format!(
            "name={} blocks={} base_filters={} feature={} lstm_hidden={} classes={} epoch_width={} kernel_width={}",
            self.name(),
            self.blocks,
            self.base_filters,
            self.feature_size,
            self.lstm_hidden,
            self.classes,
            self.epoch_width,
            self.kernel_width
        )
    }
}

/// The 14 variant names from the experimental design.
pub const ALL_CONFIG_NAMES: [&str; 14] = [
    "CNN_1",
    "CNN_3",
    "CNN_5",
    "CNN_7",
    "CNN_F_1",
    "CNN_F_3",
    "CNN_F_5",
    "CNN_F_7",
    "CNN_LSTM_3",
    "CNN_LSTM_5",
    "CNN_LSTM_7",
    "CNN_LSTM_F_3",
    "CNN_LSTM_F_5",
    "CNN_LSTM_F_7",
];

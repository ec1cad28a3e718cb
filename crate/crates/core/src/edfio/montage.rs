//! Montage resolution: map recording channels onto the model's four input
//! derivations (EEG1, EEG2, EMG, EOG) plus an optional ECG reference.

use super::{Channel, EdfError, PsgRecording};
use serde::{Deserialize, Serialize};
use std::fmt;

/// A derivation is either a single electrode channel or an ordered pair
/// computed sample-wise as `a - b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Derivation {
    Single(String),
    Pair { a: String, b: String },
}

impl Derivation {
    /// Parse the textual form used in manifests: `"C4"` is a single channel,
    /// `"C4 - A1"` (spaced hyphen) a pair. Channel labels themselves may
    /// contain unspaced hyphens.
    pub fn parse(text: &str) -> Derivation {
        match text.split_once(" - ") {
            Some((a, b)) => Derivation::Pair { a: a.trim().to_string(), b: b.trim().to_string() },
            None => Derivation::Single(text.trim().to_string()),
        }
    }
}

impl fmt::Display for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Derivation::Single(l) => f.write_str(l),
            Derivation::Pair { a, b } => write!(f, "{a} - {b}"),
        }
    }
}

/// The four mandatory model input derivations plus the optional ECG used
/// only for artifact cancellation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MontageSpec {
    pub eeg1: Derivation,
    pub eeg2: Derivation,
    pub emg: Derivation,
    pub eog: Derivation,
    #[serde(default)]
    pub ecg: Option<Derivation>,
}

/// A resolved derivation: label, sampling rate and physical samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedChannel {
    pub label: String,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

/// Montage output in the fixed channel order [EEG1, EEG2, EMG, EOG] (+ ECG).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedRecording {
    pub eeg1: DerivedChannel,
    pub eeg2: DerivedChannel,
    pub emg: DerivedChannel,
    pub eog: DerivedChannel,
    pub ecg: Option<DerivedChannel>,
}

impl DerivedRecording {
    /// The four model inputs in fixed order.
    pub fn inputs(&self) -> [&DerivedChannel; 4] {
        [&self.eeg1, &self.eeg2, &self.emg, &self.eog]
    }

    pub fn channel_count(&self) -> usize {
        4 + usize::from(self.ecg.is_some())
    }
}

fn find<'a>(rec: &'a PsgRecording, label: &str) -> Result<&'a Channel, EdfError> {
    rec.find_channel(label).ok_or_else(|| EdfError::UnresolvedLabel {
        label: label.to_string(),
        available: rec.channel_labels(),
    })
}

fn resolve(rec: &PsgRecording, derivation: &Derivation) -> Result<DerivedChannel, EdfError> {
    let duration = rec.header.record_duration_s;
    match derivation {
        Derivation::Single(label) => {
            let ch = find(rec, label)?;
            Ok(DerivedChannel {
                label: label.clone(),
                sample_rate: ch.header.sampling_rate(duration),
                samples: ch.samples.clone(),
            })
        }
        Derivation::Pair { a, b } => {
            let ca = find(rec, a)?;
            let cb = find(rec, b)?;
            let fs_a = ca.header.sampling_rate(duration);
            let fs_b = cb.header.sampling_rate(duration);
            if fs_a != fs_b {
                return Err(EdfError::RateMismatch { a: a.clone(), b: b.clone(), fs_a, fs_b });
            }
            let samples = ca.samples.iter().zip(&cb.samples).map(|(x, y)| x - y).collect();
            Ok(DerivedChannel { label: format!("{a} - {b}"), sample_rate: fs_a, samples })
        }
    }
}

/// Resolve a montage into the model's derived recording. Output channel
/// count is exactly 4 (5 with ECG) regardless of the input channel count.
pub fn select_montage(rec: &PsgRecording, spec: &MontageSpec) -> Result<DerivedRecording, EdfError> {
    Ok(DerivedRecording {
        eeg1: resolve(rec, &spec.eeg1)?,
        eeg2: resolve(rec, &spec.eeg2)?,
        emg: resolve(rec, &spec.emg)?,
        eog: resolve(rec, &spec.eog)?,
        ecg: spec.ecg.as_ref().map(|d| resolve(rec, d)).transpose()?,
    })
}

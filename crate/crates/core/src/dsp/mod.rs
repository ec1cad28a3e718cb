//! Signal homogenization: optional filtering (notch, EMG high-pass, adaptive
//! ECG cancellation) at the original sampling rates, resampling to 100 Hz,
//! 30 s segmentation and Gaussian standardization into 4x3000 epoch patterns.

mod epoch;
mod filters;
mod resample;

pub use epoch::{segment_epochs, standardize, standardize_scoped, EpochPattern, StandardizeScope};
pub use filters::{ecg_cancel, highpass_emg, notch_filter};
pub use resample::{resample, resample_to};

use crate::edfio::DerivedRecording;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Model input sampling rate after homogenization.
pub const TARGET_RATE_HZ: f64 = 100.0;
/// Samples per 30 s epoch at the target rate.
pub const EPOCH_SAMPLES: usize = 3000;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("filter design error: {0}")]
    FilterDesign(String),
    #[error("length mismatch: {a} vs {b} samples")]
    LengthMismatch { a: usize, b: usize },
    #[error("non-finite value in input data")]
    NonFinite,
}

/// Configuration of the optional pre-processing filter pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Master switch for the whole filtering step.
    pub enabled: bool,
    /// Power grid frequency of the source database (50 or 60 Hz).
    pub mains_hz: f64,
    /// EMG high-pass cut-off.
    pub emg_highpass_hz: f64,
    /// Adaptive ECG artifact cancellation; only effective when the montage
    /// provides an ECG derivation.
    pub ecg_cancellation: bool,
}

impl FilterConfig {
    pub fn disabled() -> Self {
        FilterConfig { enabled: false, mains_hz: 50.0, emg_highpass_hz: 15.0, ecg_cancellation: true }
    }

    pub fn enabled(mains_hz: f64) -> Self {
        FilterConfig { enabled: true, mains_hz, emg_highpass_hz: 15.0, ecg_cancellation: true }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.mains_hz != 50.0 && self.mains_hz != 60.0 {
            return Err(DspError::InvalidArgument(format!(
                "mains_hz must be 50 or 60, got {}",
                self.mains_hz
            )));
        }
        if self.emg_highpass_hz <= 0.0 {
            return Err(DspError::InvalidArgument("emg_highpass_hz must be > 0".to_string()));
        }
        Ok(())
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig::disabled()
    }
}

/// Homogenized recording: raw (pre-standardization) 4x3000 epoch matrices at
/// 100 Hz, in epoch order, plus provenance notes (e.g. upsampled channels).
#[derive(Debug, Clone)]
pub struct PreparedRecording {
    pub raw_epochs: Vec<Array2<f64>>,
    pub provenance: Vec<String>,
}

impl PreparedRecording {
    pub fn epoch_count(&self) -> usize {
        self.raw_epochs.len()
    }
}

/// Run the homogenization pipeline on a montage-derived recording:
/// optional (notch -> ECG cancel -> EMG high-pass) at the original rates,
/// then resample to 100 Hz and segment into 30 s epochs. Standardization is
/// applied later, over the pattern window each model variant consumes.
pub fn prepare_recording(
    derived: &DerivedRecording,
    filter: &FilterConfig,
) -> Result<PreparedRecording, DspError> {
    let mut provenance = Vec::new();
    let mut processed: Vec<Vec<f64>> = Vec::with_capacity(4);

    for (idx, ch) in derived.inputs().iter().enumerate() {
        if ch.samples.iter().any(|v| !v.is_finite()) {
            return Err(DspError::NonFinite);
        }
        let fs = ch.sample_rate;
        let mut signal = ch.samples.clone();
        if filter.enabled {
            filter.validate()?;
            signal = notch_filter(&signal, fs, filter.mains_hz)?;
            if filter.ecg_cancellation {
                if let Some(ecg) = &derived.ecg {
                    let reference = if ecg.sample_rate == fs {
                        ecg.samples.clone()
                    } else {
                        // Align the reference to the target channel's rate;
                        // the target itself stays at its original rate.
                        provenance.push(format!(
                            "ECG reference resampled {} -> {} Hz for channel {}",
                            ecg.sample_rate, fs, ch.label
                        ));
                        resample_to(&ecg.samples, ecg.sample_rate, fs)?
                    };
                    let n = signal.len().min(reference.len());
                    signal.truncate(n);
                    signal = ecg_cancel(&signal, &reference[..n], fs)?;
                }
            }
            if idx == 2 {
                signal = highpass_emg(&signal, fs, filter.emg_highpass_hz)?;
            }
        }
        if fs < TARGET_RATE_HZ {
            provenance.push(format!("channel {} upsampled from {} Hz", ch.label, fs));
        }
        processed.push(resample(&signal, fs)?);
    }

    // Rounding of independent per-channel lengths can differ by one sample.
    let min_len = processed.iter().map(|c| c.len()).min().unwrap_or(0);
    for c in &mut processed {
        c.truncate(min_len);
    }
    let channels: [&[f64]; 4] =
        [&processed[0], &processed[1], &processed[2], &processed[3]];
    let raw_epochs = segment_epochs(&channels)?;
    Ok(PreparedRecording { raw_epochs, provenance })
}

#[cfg(test)]
pub(crate) mod testutil {
    /// Least-squares amplitude of a sinusoid at `freq` in `signal`, over an
    /// integer number of cycles starting at `skip_s` seconds.
    pub fn sine_amplitude(signal: &[f64], fs: f64, freq: f64, skip_s: f64) -> f64 {
        let start = (skip_s * fs) as usize;
        let avail = signal.len().saturating_sub(start);
        let cycles = ((avail as f64 / fs) * freq).floor();
        let n = ((cycles / freq) * fs).floor() as usize;
        assert!(n > 16, "window too short for amplitude estimate");
        let w = 2.0 * std::f64::consts::PI * freq / fs;
        let (mut s, mut c) = (0.0, 0.0);
        for i in 0..n {
            let t = (start + i) as f64;
            s += signal[start + i] * (w * t).sin();
            c += signal[start + i] * (w * t).cos();
        }
        2.0 * (s * s + c * c).sqrt() / n as f64
    }

    pub fn rms(signal: &[f64]) -> f64 {
        (signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64).sqrt()
    }
}

//! EDF(+) reading and writing, montage resolution and hypnogram sidecars.
//!
//! The EDF layout is a 256-byte fixed header, 256 bytes of header per signal
//! (field-major), then data records of 2-byte little-endian signed integers.
//! All header fields are space-padded ASCII. "EDF Annotations" channels are
//! skipped as signal channels; reference hypnograms live in a plain-text
//! sidecar file (one stage token per 30 s epoch) next to the recording.

mod format;
mod hyp;
mod montage;
mod read;
mod write;

pub use hyp::{hypnogram_sidecar_path, read_hypnogram_tokens, write_hypnogram, RawHypnogram};
pub use montage::{select_montage, Derivation, DerivedChannel, DerivedRecording, MontageSpec};
pub use read::{read_edf, read_edf_file};
pub use write::{write_edf, write_edf_file};

use thiserror::Error;

pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("truncated file: missing {region}")]
    Truncated { region: String },
    #[error("non-numeric header field {field} at byte offset {offset}: {content:?}")]
    Parse { field: String, offset: usize, content: String },
    #[error("invalid header field {field}: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("calibration error on signal {signal:?}: digital_min equals digital_max")]
    Calibration { signal: String },
    #[error("file length implies a non-integral record count: {remaining} bytes remain, {record_bytes} bytes per record")]
    NonIntegralRecords { remaining: usize, record_bytes: usize },
    #[error("recording has no signal channels")]
    EmptyChannels,
    #[error("channel {channel:?} has {actual} samples, header implies {expected}")]
    InconsistentLength { channel: String, expected: usize, actual: usize },
    #[error("channel {channel:?} sample {index} = {value} outside physical range [{min}, {max}]")]
    PhysicalRange { channel: String, index: usize, value: f64, min: f64, max: f64 },
    #[error("channel {channel:?} sample {index} is not finite")]
    NonFinite { channel: String, index: usize },
    #[error("montage label {label:?} not found; available: {available:?}")]
    UnresolvedLabel { label: String, available: Vec<String> },
    #[error("montage pair {a:?} - {b:?} has mismatched sampling rates ({fs_a} vs {fs_b} Hz)")]
    RateMismatch { a: String, b: String, fs_a: f64, fs_b: f64 },
    #[error("hypnogram line {line}: unknown stage token {token:?}")]
    UnknownStageToken { line: usize, token: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed 256-byte EDF header. Text fields are stored trimmed of the space
/// padding; the writer re-pads them to the exact field widths.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    pub reserved: String,
    /// -1 is permitted on read for streaming files and is resolved from the
    /// file size; always >= 0 after a successful read.
    pub num_records: i64,
    pub record_duration_s: f64,
    pub num_signals: usize,
}

impl EdfHeader {
    /// Minimal header for a freshly synthesized recording.
    pub fn new(num_records: i64, record_duration_s: f64, num_signals: usize) -> Self {
        EdfHeader {
            version: "0".to_string(),
            patient_id: "X X X X".to_string(),
            recording_id: "Startdate 01-JAN-2024 X X X".to_string(),
            start_date: "01.01.24".to_string(),
            start_time: "00.00.00".to_string(),
            header_bytes: 256 * (num_signals + 1),
            reserved: String::new(),
            num_records,
            record_duration_s,
            num_signals,
        }
    }
}

/// Per-signal 256-byte header.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefilter: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    pub fn new(label: &str, physical_min: f64, physical_max: f64, samples_per_record: usize) -> Self {
        SignalHeader {
            label: label.to_string(),
            transducer: String::new(),
            physical_dimension: "uV".to_string(),
            physical_min,
            physical_max,
            digital_min: -32768,
            digital_max: 32767,
            prefilter: String::new(),
            samples_per_record,
            reserved: String::new(),
        }
    }

    pub fn sampling_rate(&self, record_duration_s: f64) -> f64 {
        self.samples_per_record as f64 / record_duration_s
    }

    /// One digital quantization step in physical units.
    pub fn quantization_step(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max as f64 - self.digital_min as f64)
    }

    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }
}

/// EDF calibration law: affine map from digital to physical units.
pub fn digital_to_physical(d: i32, sh: &SignalHeader) -> f64 {
    sh.physical_min
        + (d as f64 - sh.digital_min as f64) * (sh.physical_max - sh.physical_min)
            / (sh.digital_max as f64 - sh.digital_min as f64)
}

/// Inverse calibration with round-to-nearest; the caller checks range.
pub fn physical_to_digital(p: f64, sh: &SignalHeader) -> i32 {
    let scaled = (p - sh.physical_min) * (sh.digital_max as f64 - sh.digital_min as f64)
        / (sh.physical_max - sh.physical_min)
        + sh.digital_min as f64;
    scaled.round() as i32
}

/// One decoded signal channel in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub header: SignalHeader,
    pub samples: Vec<f64>,
}

/// A whole PSG recording in physical units, plus an optional reference
/// hypnogram loaded from the sidecar. Immutable after construction and safe
/// to share read-only across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct PsgRecording {
    pub header: EdfHeader,
    pub channels: Vec<Channel>,
    pub hypnogram: Option<crate::stage::Hypnogram>,
}

impl PsgRecording {
    /// Validate the structural invariants: consistent channel lengths and
    /// finite samples.
    pub fn validate(&self) -> Result<(), EdfError> {
        for ch in &self.channels {
            let expected = self.header.num_records.max(0) as usize * ch.header.samples_per_record;
            if ch.samples.len() != expected {
                return Err(EdfError::InconsistentLength {
                    channel: ch.header.label.clone(),
                    expected,
                    actual: ch.samples.len(),
                });
            }
            if let Some(idx) = ch.samples.iter().position(|v| !v.is_finite()) {
                return Err(EdfError::NonFinite { channel: ch.header.label.clone(), index: idx });
            }
        }
        Ok(())
    }

    pub fn channel_labels(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.header.label.clone()).collect()
    }

    pub fn find_channel(&self, label: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.header.label == label)
    }
}

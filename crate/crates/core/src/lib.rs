//! Automatic sleep staging of polysomnographic (PSG) recordings.
//!
//! The pipeline reads EDF(+) recordings, homogenizes the selected signal
//! derivations (optional notch / EMG high-pass / adaptive ECG cancellation,
//! resampling to 100 Hz, 30 s segmentation, Gaussian standardization), scores
//! each epoch with a CNN or CNN-LSTM model into the five AASM stages
//! (W, N1, N2, N3, R), and evaluates local and inter-database generalization
//! of individual models and of majority-vote ensembles of local models.

pub mod dsp;
pub mod edfio;
pub mod ensemble;
pub mod experiments;
pub mod metrics;
pub mod neural;
pub mod stage;
pub mod staging;
pub mod training;

pub use stage::{Hypnogram, Stage, EPOCH_SECONDS};

//! Hypnogram sidecar files: plain text, one stage token per 30 s epoch.
//!
//! Alphabet: W, N1, N2, N3, R (AASM), S1..S4, MT (R&K) and U (unscored).
//! The sidecar lives next to the recording as `<stem>.hyp`. Mapping raw
//! tokens onto the model's stage alphabet is done by
//! [`crate::experiments::normalize_labels`].

use super::EdfError;
use crate::stage::Hypnogram;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Raw sidecar tokens with their 1-based line numbers, before any scoring
/// standard normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawHypnogram {
    pub tokens: Vec<(usize, String)>,
}

impl RawHypnogram {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Sidecar path convention: recording name with the extension replaced by
/// `.hyp` (e.g. `rec01.edf` -> `rec01.hyp`).
pub fn hypnogram_sidecar_path(edf_path: &Path) -> PathBuf {
    edf_path.with_extension("hyp")
}

pub fn read_hypnogram_tokens(path: &Path) -> Result<RawHypnogram, EdfError> {
    let text = std::fs::read_to_string(path)?;
    let tokens = text
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let t = line.trim();
            if t.is_empty() { None } else { Some((i + 1, t.to_string())) }
        })
        .collect();
    Ok(RawHypnogram { tokens })
}

/// Write a hypnogram using canonical AASM tokens; unscored epochs as `U`.
pub fn write_hypnogram(hyp: &Hypnogram, path: &Path) -> Result<(), EdfError> {
    let mut f = std::fs::File::create(path)?;
    for stage in &hyp.stages {
        match stage {
            Some(s) => writeln!(f, "{}", s.token())?,
            None => writeln!(f, "U")?,
        }
    }
    Ok(())
}

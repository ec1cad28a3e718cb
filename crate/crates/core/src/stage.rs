//! Sleep stage alphabet and hypnograms.

use std::fmt;

/// Scoring epoch length in seconds.
pub const EPOCH_SECONDS: usize = 30;

/// The five AASM sleep stages, in the fixed tie-breaking order
/// W < N1 < N2 < N3 < R used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Wake,
    N1,
    N2,
    N3,
    Rem,
}

/// All stages in tie-breaking order.
pub const ALL_STAGES: [Stage; 5] = [Stage::Wake, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

impl Stage {
    /// Index into 5-element probability / count vectors.
    pub fn index(self) -> usize {
        match self {
            Stage::Wake => 0,
            Stage::N1 => 1,
            Stage::N2 => 2,
            Stage::N3 => 3,
            Stage::Rem => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Stage> {
        ALL_STAGES.get(i).copied()
    }

    /// Canonical AASM token as written in hypnogram sidecar files.
    pub fn token(self) -> &'static str {
        match self {
            Stage::Wake => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "R",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Per-epoch stage sequence for a whole recording. `None` marks an epoch
/// that is unscored (movement time, unknown or ambiguous label); unscored
/// epochs are excluded from training and from every kappa computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypnogram {
    pub stages: Vec<Option<Stage>>,
}

impl Hypnogram {
    pub fn new(stages: Vec<Option<Stage>>) -> Self {
        Hypnogram { stages }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Number of scored (non-unscored) epochs.
    pub fn scored_count(&self) -> usize {
        self.stages.iter().filter(|s| s.is_some()).count()
    }
}

impl FromIterator<Option<Stage>> for Hypnogram {
    fn from_iter<T: IntoIterator<Item = Option<Stage>>>(iter: T) -> Self {
        Hypnogram::new(iter.into_iter().collect())
    }
}

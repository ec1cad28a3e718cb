//! Confusion matrices, Cohen's kappa and cross-dataset aggregation.

use crate::stage::{Hypnogram, Stage};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("hypnogram length mismatch: predicted {predicted} epochs, reference {reference}")]
    LengthMismatch { predicted: usize, reference: usize },
    #[error("kappa undefined: no scored epoch pairs")]
    EmptyMatrix,
    #[error("kappa undefined: expected agreement is 1 but observed agreement is {observed}")]
    DegenerateAgreement { observed: f64 },
    #[error("aggregation is missing cells: {0:?}")]
    MissingCells(Vec<String>),
}

/// 5x5 confusion matrix; rows are the reference stage, columns the prediction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, reference: Stage, predicted: Stage) {
        self.counts[reference.index()][predicted.index()] += 1;
    }

    /// Element-wise merge, for parallel per-recording accumulation.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for r in 0..5 {
            for c in 0..5 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..5).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..5).map(|r| self.counts[r][c]).sum()
    }
}

/// Build a confusion matrix from a predicted and a reference hypnogram.
/// Epochs unscored in either hypnogram are skipped.
pub fn confusion(predicted: &Hypnogram, reference: &Hypnogram) -> Result<ConfusionMatrix, MetricsError> {
    if predicted.len() != reference.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            reference: reference.len(),
        });
    }
    let mut cm = ConfusionMatrix::new();
    for (p, r) in predicted.stages.iter().zip(reference.stages.iter()) {
        if let (Some(p), Some(r)) = (p, r) {
            cm.add(*r, *p);
        }
    }
    Ok(cm)
}

/// Cohen's kappa: (p_o - p_e) / (1 - p_e) with p_o the observed agreement
/// and p_e the chance agreement from the marginals.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let n = cm.total();
    if n == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let n = n as f64;
    let p_o = cm.trace() as f64 / n;
    let p_e: f64 = (0..5)
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        // All mass in one (reference, prediction) class pair.
        if (1.0 - p_o).abs() < 1e-15 {
            return Ok(1.0);
        }
        return Err(MetricsError::DegenerateAgreement { observed: p_o });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Role of a kappa value within the inter-database evaluation protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KappaRole {
    /// Individual model on its own local testing set.
    Local,
    /// Model trained on `source` predicting a different, external dataset.
    External { source: String },
    /// Ensemble of local models predicting an external dataset.
    Ensemble,
    /// Model predicting its own complete dataset; excluded from external
    /// statistics.
    BiasedDiagonal,
}

#[derive(Debug, Clone)]
pub struct KappaEntry {
    pub dataset: String,
    pub config: String,
    pub role: KappaRole,
    pub value: f64,
}

/// Flat collection of per-(dataset, config) kappa values with role tags.
#[derive(Debug, Clone, Default)]
pub struct KappaTable {
    pub entries: Vec<KappaEntry>,
}

impl KappaTable {
    pub fn push(&mut self, dataset: &str, config: &str, role: KappaRole, value: f64) {
        self.entries.push(KappaEntry {
            dataset: dataset.to_string(),
            config: config.to_string(),
            role,
            value,
        });
    }

    fn datasets(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.dataset.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    fn configs(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.config) {
                seen.push(e.config.clone());
            }
        }
        seen
    }
}

/// One aggregated row: mean local (I), mean of per-dataset external averages
/// (II), mean ensemble (III), and their pairwise differences. Differences are
/// computed on the unrounded means; rounding happens only at rendering time.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub config: String,
    pub local_mean: f64,
    pub external_mean: f64,
    pub ensemble_mean: f64,
    pub diff_external_local: f64,
    pub diff_ensemble_local: f64,
    pub diff_ensemble_external: f64,
}

/// Aggregate a kappa table into per-config global rows. Biased-diagonal
/// entries never contribute. Every config must have a local, at least one
/// external and an ensemble value on every dataset it appears in.
pub fn aggregate(table: &KappaTable) -> Result<Vec<AggregateRow>, MetricsError> {
    let datasets = table.datasets();
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for config in table.configs() {
        let mut locals = Vec::new();
        let mut external_avgs = Vec::new();
        let mut ensembles = Vec::new();
        for ds in &datasets {
            let cell = |role_match: &dyn Fn(&KappaRole) -> bool| -> Vec<f64> {
                table
                    .entries
                    .iter()
                    .filter(|e| e.dataset == *ds && e.config == config && role_match(&e.role))
                    .map(|e| e.value)
                    .collect()
            };
            let local = cell(&|r| matches!(r, KappaRole::Local));
            let external = cell(&|r| matches!(r, KappaRole::External { .. }));
            let ensemble = cell(&|r| matches!(r, KappaRole::Ensemble));
            match local.as_slice() {
                [v] => locals.push(*v),
                _ => missing.push(format!("{config}/{ds}/local")),
            }
            if external.is_empty() {
                missing.push(format!("{config}/{ds}/external"));
            } else {
                external_avgs.push(mean(&external));
            }
            match ensemble.as_slice() {
                [v] => ensembles.push(*v),
                _ => missing.push(format!("{config}/{ds}/ensemble")),
            }
        }
        if !missing.is_empty() {
            continue;
        }
        let local_mean = mean(&locals);
        let external_mean = mean(&external_avgs);
        let ensemble_mean = mean(&ensembles);
        rows.push(AggregateRow {
            config,
            local_mean,
            external_mean,
            ensemble_mean,
            diff_external_local: external_mean - local_mean,
            diff_ensemble_local: ensemble_mean - local_mean,
            diff_ensemble_external: ensemble_mean - external_mean,
        });
    }
    if missing.is_empty() {
        Ok(rows)
    } else {
        Err(MetricsError::MissingCells(missing))
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Round half away from zero to `digits` decimals, for report rendering only.
pub fn round_half_away(value: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let scaled = value * scale;
    let rounded = if scaled >= 0.0 { (scaled + 0.5).floor() } else { (scaled - 0.5).ceil() };
    rounded / scale
}

/// Render a kappa for Tables 1-3 style output (2 decimals).
pub fn fmt_kappa2(value: f64) -> String {
    format!("{:.2}", round_half_away(value, 2))
}

/// Render a kappa for Table 4 style output (4 decimals).
pub fn fmt_kappa4(value: f64) -> String {
    format!("{:.4}", round_half_away(value, 4))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(stages: &[Stage]) -> Hypnogram {
        Hypnogram::new(stages.iter().map(|s| Some(*s)).collect())
    }

    #[test]
    fn confusion_hand_case() {
        use Stage::*;
        let reference = hyp(&[Wake, Wake, N2, Rem]);
        let predicted = hyp(&[Wake, N2, N2, Rem]);
        let cm = confusion(&predicted, &reference).unwrap();
        assert_eq!(cm.counts[Wake.index()][Wake.index()], 1);
        assert_eq!(cm.counts[Wake.index()][N2.index()], 1);
        assert_eq!(cm.counts[N2.index()][N2.index()], 1);
        assert_eq!(cm.counts[Rem.index()][Rem.index()], 1);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn confusion_skips_unscored() {
        let reference = Hypnogram::new(vec![Some(Stage::Wake), None, Some(Stage::N2)]);
        let predicted = Hypnogram::new(vec![Some(Stage::Wake), Some(Stage::N1), None]);
        let cm = confusion(&predicted, &reference).unwrap();
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn confusion_length_mismatch() {
        let a = hyp(&[Stage::Wake]);
        let b = hyp(&[Stage::Wake, Stage::N1]);
        assert!(matches!(confusion(&a, &b), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn all_unscored_reference_gives_undefined_kappa() {
        let reference = Hypnogram::new(vec![None, None]);
        let predicted = hyp(&[Stage::Wake, Stage::N1]);
        let cm = confusion(&predicted, &reference).unwrap();
        assert!(matches!(kappa(&cm), Err(MetricsError::EmptyMatrix)));
    }

    #[test]
    fn kappa_perfect_agreement() {
        use Stage::*;
        let h = hyp(&[Wake, N1, N2, N3, Rem, N2]);
        let cm = confusion(&h, &h).unwrap();
        assert!((kappa(&cm).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kappa_constant_predictor_is_zero() {
        use Stage::*;
        let reference = hyp(&[Wake, N1, N2, N3, Rem, Wake, N2, N2]);
        let predicted = hyp(&[N2; 8]);
        let cm = confusion(&predicted, &reference).unwrap();
        assert!(kappa(&cm).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kappa_two_class_hand_case() {
        // [[20,5],[10,15]] embedded in the 5x5 matrix: p_o=0.7, p_e=0.5.
        let mut cm = ConfusionMatrix::new();
        cm.counts[0][0] = 20;
        cm.counts[0][1] = 5;
        cm.counts[1][0] = 10;
        cm.counts[1][1] = 15;
        assert!((kappa(&cm).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn kappa_single_class_both_raters() {
        let mut cm = ConfusionMatrix::new();
        cm.counts[2][2] = 17;
        assert!((kappa(&cm).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kappa_scale_invariance() {
        let mut cm = ConfusionMatrix::new();
        cm.counts[0][0] = 7;
        cm.counts[0][3] = 2;
        cm.counts[3][3] = 5;
        cm.counts[3][1] = 1;
        cm.counts[1][1] = 4;
        let k1 = kappa(&cm).unwrap();
        let mut scaled = cm.clone();
        for r in 0..5 {
            for c in 0..5 {
                scaled.counts[r][c] *= 13;
            }
        }
        assert!((kappa(&scaled).unwrap() - k1).abs() < 1e-12);
    }

    #[test]
    fn aggregate_reproduces_published_arithmetic() {
        // Per-dataset values for one config: local, external average, ensemble.
        let locals = [0.74, 0.68, 0.75, 0.76, 0.76, 0.76];
        let externals = [0.54, 0.49, 0.54, 0.56, 0.54, 0.53];
        let ensembles = [0.61, 0.60, 0.62, 0.67, 0.61, 0.59];
        let mut table = KappaTable::default();
        for (i, ((l, e), s)) in locals.iter().zip(&externals).zip(&ensembles).enumerate() {
            let ds = format!("d{i}");
            table.push(&ds, "CNN_1", KappaRole::Local, *l);
            table.push(&ds, "CNN_1", KappaRole::External { source: "other".into() }, *e);
            table.push(&ds, "CNN_1", KappaRole::Ensemble, *s);
        }
        let rows = aggregate(&table).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert!((row.local_mean - 0.7417).abs() < 1e-4);
        assert!((row.external_mean - 0.5333).abs() < 1e-4);
        assert!((row.ensemble_mean - 0.6167).abs() < 1e-4);
        assert!((row.diff_external_local - (-0.2083)).abs() < 1e-4);
    }

    #[test]
    fn aggregate_reports_missing_cells() {
        let mut table = KappaTable::default();
        table.push("a", "CNN_1", KappaRole::Local, 0.7);
        let err = aggregate(&table).unwrap_err();
        match err {
            MetricsError::MissingCells(cells) => {
                assert!(cells.iter().any(|c| c.contains("external")));
                assert!(cells.iter().any(|c| c.contains("ensemble")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn biased_diagonal_excluded() {
        let mut table = KappaTable::default();
        table.push("a", "CNN_1", KappaRole::Local, 0.8);
        table.push("a", "CNN_1", KappaRole::External { source: "b".into() }, 0.5);
        table.push("a", "CNN_1", KappaRole::BiasedDiagonal, 0.99);
        table.push("a", "CNN_1", KappaRole::Ensemble, 0.6);
        let rows = aggregate(&table).unwrap();
        assert!((rows[0].external_mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rounding_half_away_from_zero() {
        assert_eq!(fmt_kappa2(0.125), "0.13");
        assert_eq!(fmt_kappa2(-0.125), "-0.13");
        assert_eq!(fmt_kappa4(0.74165), "0.7417");
        assert_eq!(fmt_kappa4(-0.20833333), "-0.2083");
    }
}

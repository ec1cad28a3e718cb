//! The training protocol: recording-level splits, mini-batches of 100
//! patterns, SGD with the decade learning-rate ladder, validation loss
//! evaluated 5 times per training epoch, patience 10, 30-epoch cap,
//! checkpoint-at-best, fully deterministic per seed.

use crate::dsp::PreparedRecording;
use crate::metrics::{confusion, kappa, ConfusionMatrix, MetricsError};
use crate::neural::{sgd_step_bundle, ConvScratch, ParamBundle, Parameterized, Phase};
use crate::stage::{Hypnogram, Stage};
use crate::staging::{
    build_model, score_prepared, standardized_epoch, window_pattern, BatchInput, ModelConfig,
    ModelKind, StagingError, StagingModel,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("split error: {0}")]
    Split(String),
    #[error("training error: {0}")]
    Train(String),
    #[error(transparent)]
    Staging(#[from] StagingError),
    #[error(transparent)]
    Neural(#[from] crate::neural::NeuralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Recording-level dataset partition: ~20% testing, ~20% of the remainder
/// for validation, the rest for training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub tr: Vec<String>,
    pub val: Vec<String>,
    pub ts: Vec<String>,
    pub seed: u64,
}

/// Shuffled recording-level split, deterministic per seed. Test and
/// validation sizes are floored at 20% with at least one recording each.
pub fn split_dataset(recording_ids: &[String], seed: u64) -> Result<SplitPlan, TrainingError> {
    let n = recording_ids.len();
    if n < 5 {
        return Err(TrainingError::Split(format!(
            "need at least 5 recordings to split, got {n}"
        )));
    }
    let mut ids: Vec<String> = recording_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let ts_n = (n / 5).max(1);
    let rest = n - ts_n;
    let val_n = (rest / 5).max(1);
    let ts = ids[..ts_n].to_vec();
    let val = ids[ts_n..ts_n + val_n].to_vec();
    let tr = ids[ts_n + val_n..].to_vec();
    Ok(SplitPlan { tr, val, ts, seed })
}

/// Learning-rate ladder: 1e-3 for epochs 1-10, one decade down every 10
/// epochs, floored at 1e-6.
pub fn lr_at_epoch(epoch: usize) -> f64 {
    debug_assert!(epoch >= 1);
    match epoch {
        1..=10 => 1e-3,
        11..=20 => 1e-4,
        21..=30 => 1e-5,
        _ => 1e-6,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Early-stopping state over validation-loss evaluations: the counter
/// resets on strict improvement (tolerance 1e-9) and stops after
/// `patience` consecutive evaluations without one.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    pub best: f64,
    pub evals_since_improvement: usize,
    pub patience: usize,
    pub tolerance: f64,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop { best: f64::INFINITY, evals_since_improvement: 0, patience, tolerance: 1e-9 }
    }

    /// Returns (improved, decision).
    pub fn observe(&mut self, val_loss: f64) -> (bool, StopDecision) {
        let improved = val_loss < self.best - self.tolerance;
        if improved {
            self.best = val_loss;
            self.evals_since_improvement = 0;
        } else {
            self.evals_since_improvement += 1;
        }
        if self.evals_since_improvement >= self.patience {
            (improved, StopDecision::Stop)
        } else {
            (improved, StopDecision::Continue)
        }
    }
}

/// One homogenized recording with its aligned reference labels.
#[derive(Debug, Clone)]
pub struct TrainRecording {
    pub id: String,
    pub prepared: PreparedRecording,
    /// One label per epoch; `None` marks unscored epochs, which are
    /// excluded from training batches and kappa computations.
    pub labels: Vec<Option<Stage>>,
}

impl TrainRecording {
    /// Epochs usable as samples: scored and within both signal and label range.
    fn samples(&self) -> impl Iterator<Item = usize> + '_ {
        let m = self.prepared.epoch_count().min(self.labels.len());
        (1..=m).filter(|&k| self.labels[k - 1].is_some())
    }

    pub fn reference_hypnogram(&self, len: usize) -> Hypnogram {
        Hypnogram::new(self.labels.iter().take(len).cloned().collect())
    }
}

/// A database prepared for one filtering flavor, with its split plan.
#[derive(Debug, Clone)]
pub struct StagedDataset {
    pub recordings: Vec<TrainRecording>,
    pub split: SplitPlan,
}

impl StagedDataset {
    fn indices_of(&self, ids: &[String]) -> Vec<usize> {
        ids.iter()
            .filter_map(|id| self.recordings.iter().position(|r| &r.id == id))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub evals_per_epoch: usize,
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { batch_size: 100, max_epochs: 30, evals_per_epoch: 5, patience: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub eval_index: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Training epochs in which at least one batch was processed.
    pub iterations: usize,
    pub curve: Vec<EvalRecord>,
    pub kappa_tr: f64,
    pub kappa_val: f64,
    pub kappa_ts: f64,
}

/// Sample address: recording index and 1-based epoch index.
type Sample = (usize, usize);

/// Train a model per the protocol and return the parameters that achieved
/// the best validation loss, plus the training report. Deterministic for a
/// fixed (config, dataset, seed): fixed shuffle order, fixed dropout
/// stream, serial batch order.
pub fn train(
    config: &ModelConfig,
    dataset: &StagedDataset,
    seed: u64,
    options: &TrainOptions,
) -> Result<(StagingModel, TrainReport), TrainingError> {
    let tr_idx = dataset.indices_of(&dataset.split.tr);
    let val_idx = dataset.indices_of(&dataset.split.val);
    let ts_idx = dataset.indices_of(&dataset.split.ts);
    for (name, idx, ids) in [
        ("training", &tr_idx, &dataset.split.tr),
        ("validation", &val_idx, &dataset.split.val),
        ("testing", &ts_idx, &dataset.split.ts),
    ] {
        if idx.is_empty() {
            return Err(TrainingError::Train(format!("{name} split is empty")));
        }
        if idx.len() != ids.len() {
            return Err(TrainingError::Train(format!(
                "{name} split references recordings missing from the dataset"
            )));
        }
    }

    let tr_samples: Vec<Sample> = collect_samples(dataset, &tr_idx);
    let val_samples: Vec<Sample> = collect_samples(dataset, &val_idx);
    if tr_samples.is_empty() || val_samples.is_empty() {
        return Err(TrainingError::Train("no scored epochs in training or validation split".to_string()));
    }

    let mut model = build_model(config, seed)?;
    let mut scratch = ConvScratch::new();
    // Separate stream for shuffling and dropout; the build consumed `seed`.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut stopper = EarlyStop::new(options.patience);
    let mut best_params: ParamBundle = model.export_params();
    let mut curve: Vec<EvalRecord> = Vec::new();
    let mut eval_index = 0usize;
    let mut iterations = 0usize;
    let mut stopped = false;

    model.set_mode(Phase::Train);
    'epochs: for epoch in 1..=options.max_epochs {
        let lr = lr_at_epoch(epoch);
        let batches = plan_batches(config.kind, &tr_samples, options.batch_size, &mut rng)?;
        if batches.is_empty() {
            return Err(TrainingError::Train("no training batches could be formed".to_string()));
        }
        iterations = epoch;
        let eval_points = eval_batches(batches.len(), options.evals_per_epoch);
        let mut losses_since_eval: Vec<f64> = Vec::new();
        for (bi, batch_samples) in batches.iter().enumerate() {
            let batch = assemble_batch(config, dataset, batch_samples)?;
            let step = model.train_step(&batch, &mut rng, &mut scratch)?;
            losses_since_eval.push(step.loss);
            let mut params = model.export_params();
            sgd_step_bundle(&mut params, &step.gradients, lr)?;
            model.import_params(&params)?;

            if eval_points.contains(&(bi + 1)) {
                eval_index += 1;
                let val_loss = evaluate_loss(config, &model, dataset, &val_samples, options.batch_size, &mut scratch)?;
                let train_loss =
                    losses_since_eval.iter().sum::<f64>() / losses_since_eval.len() as f64;
                losses_since_eval.clear();
                let (improved, decision) = stopper.observe(val_loss);
                if improved {
                    best_params = model.export_params();
                }
                curve.push(EvalRecord { eval_index, epoch, lr, train_loss, val_loss, improved });
                if decision == StopDecision::Stop {
                    stopped = true;
                    break 'epochs;
                }
            }
        }
    }
    let _ = stopped;

    model.import_params(&best_params).map_err(StagingError::from)?;
    model.set_mode(Phase::Infer);

    let kappa_tr = split_kappa(&model, dataset, &tr_idx)?;
    let kappa_val = split_kappa(&model, dataset, &val_idx)?;
    let kappa_ts = split_kappa(&model, dataset, &ts_idx)?;
    Ok((model, TrainReport { iterations, curve, kappa_tr, kappa_val, kappa_ts }))
}

fn collect_samples(dataset: &StagedDataset, rec_indices: &[usize]) -> Vec<Sample> {
    let mut out = Vec::new();
    for &ri in rec_indices {
        out.extend(dataset.recordings[ri].samples().map(|k| (ri, k)));
    }
    out
}

/// Batch sample plans for one pass over the training set.
///
/// CNN-only batches are uniform shuffles. CNN-LSTM batches are shuffled
/// contiguous runs, so neighboring sequences share epoch patterns and the
/// deduplicated CNN pass does ~1x (not Lx) the work per sample.
fn plan_batches(
    kind: ModelKind,
    samples: &[Sample],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Sample>>, TrainingError> {
    let mut batches: Vec<Vec<Sample>> = Vec::new();
    match kind {
        ModelKind::CnnOnly => {
            let mut order: Vec<Sample> = samples.to_vec();
            order.shuffle(rng);
            for chunk in order.chunks(batch_size) {
                batches.push(chunk.to_vec());
            }
        }
        ModelKind::CnnLstm => {
            // Runs of consecutive samples within each recording.
            let mut runs: Vec<Vec<Sample>> = Vec::new();
            let mut current: Vec<Sample> = Vec::new();
            for &(ri, k) in samples {
                let continues = current.len() < batch_size
                    && current.last().is_some_and(|&(pri, _)| pri == ri);
                if !continues && !current.is_empty() {
                    runs.push(std::mem::take(&mut current));
                }
                current.push((ri, k));
            }
            if !current.is_empty() {
                runs.push(current);
            }
            runs.shuffle(rng);
            batches = runs;
        }
    }
    // Batch-norm statistics need at least two samples; fold a trailing
    // singleton into the previous batch.
    let mut i = 0;
    while i < batches.len() {
        if batches[i].len() == 1 && batches.len() > 1 {
            let single = batches.remove(i);
            let target = if i == 0 { 0 } else { i - 1 };
            batches[target].extend(single);
        } else {
            i += 1;
        }
    }
    if batches.len() == 1 && batches[0].len() < 2 {
        return Err(TrainingError::Train(
            "training set has fewer than 2 usable samples".to_string(),
        ));
    }
    Ok(batches)
}

/// Assemble the model-specific batch input for a set of samples.
fn assemble_batch(
    config: &ModelConfig,
    dataset: &StagedDataset,
    samples: &[Sample],
) -> Result<BatchInput, TrainingError> {
    let l = config.sequence_len;
    match config.kind {
        ModelKind::CnnOnly => {
            let mut patterns = Vec::with_capacity(samples.len());
            let mut targets = Vec::with_capacity(samples.len());
            for &(ri, k) in samples {
                let rec = &dataset.recordings[ri];
                patterns.push(window_pattern(&rec.prepared, k, l)?);
                targets.push(rec.labels[k - 1].expect("scored sample").index());
            }
            Ok(BatchInput::CnnOnly { patterns, targets })
        }
        ModelKind::CnnLstm => {
            // Deduplicate the union of all window indices.
            let mut needed: Vec<(usize, usize)> = Vec::new();
            let mut windows: Vec<Vec<(usize, usize)>> = Vec::with_capacity(samples.len());
            for &(ri, k) in samples {
                let rec = &dataset.recordings[ri];
                let m = rec.prepared.epoch_count().min(rec.labels.len());
                let idx = crate::staging::sequence_indices(k, l, m)?;
                let window: Vec<(usize, usize)> = idx.into_iter().map(|j| (ri, j)).collect();
                needed.extend(window.iter().copied());
                windows.push(window);
            }
            needed.sort_unstable();
            needed.dedup();
            let position = |key: &(usize, usize)| needed.binary_search(key).expect("present");
            let unique: Vec<_> = needed
                .iter()
                .map(|&(ri, j)| standardized_epoch(&dataset.recordings[ri].prepared, j))
                .collect::<Result<_, _>>()?;
            let sequences: Vec<Vec<usize>> = windows
                .iter()
                .map(|w| w.iter().map(|key| position(key)).collect())
                .collect();
            let targets = samples
                .iter()
                .map(|&(ri, k)| dataset.recordings[ri].labels[k - 1].expect("scored sample").index())
                .collect();
            Ok(BatchInput::CnnLstm { unique, sequences, targets })
        }
    }
}

/// Batch indices (1-based) after which validation is evaluated: the
/// `evals_per_epoch` evenly spaced points ceil(i*B/e).
fn eval_batches(total: usize, evals: usize) -> Vec<usize> {
    let mut points: Vec<usize> = (1..=evals).map(|i| (i * total).div_ceil(evals)).collect();
    points.dedup();
    points
}

fn evaluate_loss(
    config: &ModelConfig,
    model: &StagingModel,
    dataset: &StagedDataset,
    samples: &[Sample],
    batch_size: usize,
    scratch: &mut ConvScratch,
) -> Result<f64, TrainingError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size) {
        let batch = assemble_batch(config, dataset, chunk)?;
        let loss = model.batch_loss(&batch, scratch)?;
        total += loss * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Pooled-epoch kappa of the model over all recordings of a split.
fn split_kappa(
    model: &StagingModel,
    dataset: &StagedDataset,
    rec_indices: &[usize],
) -> Result<f64, TrainingError> {
    let mut cm = ConfusionMatrix::new();
    for &ri in rec_indices {
        let rec = &dataset.recordings[ri];
        let scored = score_prepared(model, &rec.prepared)?;
        let len = scored.hypnogram.len().min(rec.labels.len());
        let predicted = Hypnogram::new(scored.hypnogram.stages[..len].to_vec());
        let reference = rec.reference_hypnogram(len);
        cm.merge(&confusion(&predicted, &reference)?);
    }
    Ok(kappa(&cm)?)
}

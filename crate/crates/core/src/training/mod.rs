//! Weakly supervised pretraining: time-bin targets, multi-dataset batching,
//! subject-independent folds and the optimization loop.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, EpochStats};
pub use optim::AdamW;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{prepare_window, DspError, WindowPreprocess};
use crate::io::{select_channels, trial_samples, Store, StoreError, Trial};
use crate::model::{Mode, ModelConfig, ModelError, ModelParams, Network};
use crate::rng::{derive_seed, derived, seeded};
use crate::sequencing::{bin_loss, bin_loss_grad, SequenceMappingSet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset collection is empty")]
    EmptyDataset,
    #[error("{subjects} subjects cannot fill {k} folds")]
    TooFewSubjects { subjects: usize, k: usize },
    #[error("loss diverged at epoch {epoch}, step {step}")]
    DivergenceDetected { epoch: usize, step: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Subject-independent assignment of subjects to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn validation_subjects(&self, fold: usize) -> BTreeSet<String> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(s, _)| s.clone()).collect()
    }

    pub fn training_subjects(&self, fold: usize) -> BTreeSet<String> {
        self.assignment.iter().filter(|(_, &f)| f != fold).map(|(s, _)| s.clone()).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles the subjects with `seed` and deals them round-robin.
pub fn split_folds<S: AsRef<str>>(subjects: &[S], k: usize, seed: u64) -> Result<FoldSplit, TrainError> {
    let mut ids: Vec<String> = subjects.iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    if k == 0 || ids.len() < k {
        return Err(TrainError::TooFewSubjects { subjects: ids.len(), k });
    }
    ids.shuffle(&mut seeded(derive_seed(seed, "folds", k as u64)));
    let assignment = ids.into_iter().enumerate().map(|(i, s)| (s, i % k)).collect();
    Ok(FoldSplit { k, assignment })
}

/// Bin of a window centred at `center` seconds into a valid span of
/// `span` seconds split into `y` equal bins.
pub fn bin_of_center(center: f64, span: f64, y: usize) -> usize {
    let width = span / y as f64;
    ((center / width).floor().max(0.0) as usize).min(y - 1)
}

/// Time-bin target of a window `[start, start+len)` (samples, trial
/// relative) inside `trial`'s valid span.
pub fn assign_bin(trial: &Trial, start: usize, len: usize, y: usize) -> usize {
    let center = start as f64 + len as f64 / 2.0 - trial.valid.0 as f64;
    bin_of_center(center, trial.valid_len() as f64, y)
}

/// Bin layout for one whole-night recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSchedule {
    pub n_bins: usize,
    pub bin_seconds: f64,
    pub windows_per_bin: usize,
    pub windows_per_recording: usize,
}

pub fn sleep_bin_setup(duration_seconds: f64, n_bins: usize, window_seconds: f64) -> BinSchedule {
    let bin_seconds = duration_seconds / n_bins as f64;
    let windows_per_bin = (bin_seconds / window_seconds).floor() as usize;
    BinSchedule { n_bins, bin_seconds, windows_per_bin, windows_per_recording: windows_per_bin * n_bins }
}

/// Sample range `[start, end)` keeping at most `max_seconds` around the
/// recording midpoint.
pub fn clip_around_midpoint(n_samples: usize, fs: f64, max_seconds: f64) -> (usize, usize) {
    let keep = ((max_seconds * fs).round() as usize).min(n_samples);
    let start = (n_samples - keep) / 2;
    (start, start + keep)
}

/// How many windows make one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochSize {
    /// Datasets × largest dataset trial count (every dataset oversampled
    /// to the size of the largest).
    Oversampled,
    /// A fixed number of windows per dataset.
    PerDataset(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub window_seconds: f64,
    /// Time bins `Y`.
    pub n_bins: usize,
    pub seed: u64,
    pub preprocess: WindowPreprocess,
    pub smoothing: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epoch_size")]
    pub epoch_size: EpochSize,
    /// Draw window starts on the window grid (sleep epochs) instead of
    /// anywhere in the valid span.
    #[serde(default)]
    pub grid_aligned: bool,
}

fn default_gamma() -> f64 {
    0.5
}
fn default_epoch_size() -> EpochSize {
    EpochSize::Oversampled
}

impl TrainConfig {
    pub fn motor(seed: u64) -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            window_seconds: 1.5,
            n_bins: 16,
            seed,
            preprocess: WindowPreprocess::default(),
            smoothing: 0.1,
            gamma: default_gamma(),
            epoch_size: EpochSize::Oversampled,
            grid_aligned: false,
        }
    }

    /// Whole-night setup: 30 s epochs, 32 bins, 960 windows per recording.
    pub fn sleep(seed: u64) -> Self {
        TrainConfig {
            epochs: 40,
            window_seconds: 30.0,
            n_bins: 32,
            preprocess: WindowPreprocess { bandpass: None, order: 3, trial_level: false },
            epoch_size: EpochSize::PerDataset(960),
            grid_aligned: true,
            ..Self::motor(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.n_bins == 0 {
            return bad("epochs, batch_size and n_bins must be positive");
        }
        if !(self.learning_rate > 0.0 && self.weight_decay >= 0.0 && self.window_seconds > 0.0) {
            return bad("learning_rate and window_seconds must be positive, weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.smoothing) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("smoothing must lie in [0, 1) and gamma in [0, 1]");
        }
        Ok(())
    }

    pub fn window_len(&self, fs: f64) -> usize {
        (self.window_seconds * fs).round() as usize
    }
}

/// One trial held in memory as `[E × L]`.
#[derive(Debug, Clone)]
pub struct CollectionTrial {
    pub data: Array2<f64>,
    pub trial: Trial,
}

#[derive(Debug, Clone)]
pub struct CollectionDataset {
    pub id: String,
    pub trials: Vec<CollectionTrial>,
}

/// Trials of several datasets on a shared electrode set and rate.
#[derive(Debug, Clone)]
pub struct Collection {
    pub fs: f64,
    pub electrodes: Vec<String>,
    pub datasets: Vec<CollectionDataset>,
}

impl Collection {
    /// Loads every trial whose subject passes `keep`, restricted to
    /// `electrodes` in that order. Datasets left without trials are dropped.
    pub fn from_store<S: AsRef<str>>(store: &Store, electrodes: &[S], keep: impl Fn(&str) -> bool) -> Result<Self, TrainError> {
        let electrodes: Vec<String> = electrodes.iter().map(|s| s.as_ref().to_string()).collect();
        let mut fs = None;
        let mut datasets = Vec::new();
        for table in &store.tables {
            let id = &table.dataset_id;
            let mut trials = Vec::new();
            for t in table.trials.iter().filter(|t| keep(&t.subject_id)) {
                let rec = store.recording(&t.recording).ok_or_else(|| StoreError::UnknownRecording(t.recording.clone()))?;
                let rec = select_channels(rec, &electrodes).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
                match fs {
                    None => fs = Some(rec.fs),
                    Some(f) if (f - rec.fs).abs() > 1e-9 => {
                        return Err(TrainError::InvalidConfig(format!("mixed sampling rates {f} and {}", rec.fs)));
                    }
                    _ => {}
                }
                trials.push(CollectionTrial { data: trial_samples(&rec, t), trial: t.clone() });
            }
            if !trials.is_empty() {
                datasets.push(CollectionDataset { id: id.clone(), trials });
            }
        }
        let fs = fs.ok_or(TrainError::EmptyDataset)?;
        Ok(Collection { fs, electrodes, datasets })
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.id.clone()).collect()
    }

    pub fn n_trials(&self) -> usize {
        self.datasets.iter().map(|d| d.trials.len()).sum()
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.datasets.iter().flat_map(|d| d.trials.iter().map(|t| t.trial.subject_id.clone())).collect()
    }

    /// Keeps only trials whose subject passes `keep`.
    pub fn filter_subjects(&self, keep: impl Fn(&str) -> bool) -> Self {
        let datasets = self
            .datasets
            .iter()
            .map(|d| CollectionDataset { id: d.id.clone(), trials: d.trials.iter().filter(|t| keep(&t.trial.subject_id)).cloned().collect() })
            .filter(|d| !d.trials.is_empty())
            .collect();
        Collection { fs: self.fs, electrodes: self.electrodes.clone(), datasets }
    }

    /// Preprocessed model input for one draw.
    pub fn window(&self, draw: &Draw, len: usize, pre: &WindowPreprocess) -> Result<Array2<f64>, DspError> {
        let t = &self.datasets[draw.dataset].trials[draw.trial];
        prepare_window(&t.data, draw.start, len, self.fs, pre)
    }
}

/// One sampled training window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub dataset: usize,
    pub trial: usize,
    /// Window start within the trial, samples.
    pub start: usize,
    pub bin: usize,
}

/// Draws `n` windows: a dataset uniformly, then a trial uniformly, then a
/// window start inside its valid span.
pub fn make_epoch_stream<R: Rng + ?Sized>(
    collection: &Collection,
    n: usize,
    window_len: usize,
    n_bins: usize,
    grid_aligned: bool,
    rng: &mut R,
) -> Result<Vec<Draw>, TrainError> {
    if collection.datasets.is_empty() || collection.datasets.iter().any(|d| d.trials.is_empty()) {
        return Err(TrainError::EmptyDataset);
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let dataset = rng.random_range(0..collection.datasets.len());
        let ds = &collection.datasets[dataset];
        let trial = rng.random_range(0..ds.trials.len());
        let t = &ds.trials[trial].trial;
        let (v0, v1) = t.valid;
        if v1 < v0 + window_len {
            return Err(DspError::TrialTooShort { valid: v1.saturating_sub(v0), window: window_len }.into());
        }
        let start = if grid_aligned {
            let slots = (v1 - v0) / window_len;
            v0 + rng.random_range(0..slots) * window_len
        } else {
            rng.random_range(v0..=v1 - window_len)
        };
        out.push(Draw { dataset, trial, start, bin: assign_bin(t, start, window_len, n_bins) });
    }
    Ok(out)
}

pub fn epoch_len(collection: &Collection, size: EpochSize) -> usize {
    match size {
        EpochSize::Oversampled => collection.datasets.len() * collection.datasets.iter().map(|d| d.trials.len()).max().unwrap_or(0),
        EpochSize::PerDataset(n) => collection.datasets.len() * n,
    }
}

/// Mean loss and top-1 bin accuracy of a batch of draws.
struct BatchResult {
    loss: f64,
    correct: usize,
    grad: Option<(ModelParams, SequenceMappingSet)>,
}

fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

#[allow(clippy::too_many_arguments)]
fn run_batch(
    net: &Network,
    params: &ModelParams,
    mappings: &SequenceMappingSet,
    collection: &Collection,
    draws: &[Draw],
    cfg: &TrainConfig,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(BatchResult, Option<crate::model::BatchForward>), TrainError> {
    let len = net.config().n_times;
    let windows: Vec<Array2<f64>> = draws.par_iter().map(|d| collection.window(d, len, &cfg.preprocess)).collect::<Result<_, _>>()?;
    let flat: Vec<Vec<f64>> = windows.iter().map(|w| w.iter().copied().collect()).collect();
    let refs: Vec<&[f64]> = flat.iter().map(|v| v.as_slice()).collect();
    let fwd = net.forward(params, &refs, mode, &mut seeded(dropout_seed))?;
    let c = net.config().n_components;
    let b = draws.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let want_grad = mode == Mode::Train;
    let mut map_grad = mappings.zeros_like();
    let mut dz = vec![0.0; draws.len() * c];
    for (i, d) in draws.iter().enumerate() {
        let id = &collection.datasets[d.dataset].id;
        let z = &fwd.z[i * c..(i + 1) * c];
        let p = mappings.forward_bins(z, id).map_err(|e| TrainError::UnknownDataset(e.0))?;
        loss += bin_loss(&p, d.bin, cfg.smoothing) / b;
        if argmax(&p) == d.bin {
            correct += 1;
        }
        if want_grad {
            let dp: Vec<f64> = bin_loss_grad(&p, d.bin, cfg.smoothing).iter().map(|g| g / b).collect();
            let dzi = mappings.backward_bins(z, id, &dp, &mut map_grad).map_err(|e| TrainError::UnknownDataset(e.0))?;
            dz[i * c..(i + 1) * c].copy_from_slice(&dzi);
        }
    }
    let grad = if want_grad { Some((net.backward(params, &fwd, &dz), map_grad)) } else { None };
    Ok((BatchResult { loss, correct, grad }, if want_grad { Some(fwd) } else { None }))
}

/// Eval-mode mean loss and bin accuracy over `draws`.
pub fn evaluate(
    net: &Network,
    params: &ModelParams,
    mappings: &SequenceMappingSet,
    collection: &Collection,
    draws: &[Draw],
    cfg: &TrainConfig,
) -> Result<(f64, f64), TrainError> {
    let mut loss = 0.0;
    let mut correct = 0;
    for chunk in draws.chunks(cfg.batch_size) {
        let (r, _) = run_batch(net, params, mappings, collection, chunk, cfg, Mode::Eval, 0)?;
        loss += r.loss * chunk.len() as f64;
        correct += r.correct;
    }
    let n = draws.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Pretrains a fresh model on `collection` (training subjects only).
pub fn pretrain(collection: &Collection, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Checkpoint, TrainError> {
    pretrain_with(collection, model_cfg, cfg, |_| {})
}

/// [`pretrain`] with a per-epoch callback.
pub fn pretrain_with(
    collection: &Collection,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    if collection.datasets.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if (model_cfg.fs - collection.fs).abs() > 1e-9 || model_cfg.n_electrodes != collection.electrodes.len() {
        return Err(TrainError::InvalidConfig("model rate/electrodes differ from the collection".into()));
    }
    let len = cfg.window_len(collection.fs);
    if len != model_cfg.n_times {
        return Err(TrainError::InvalidConfig(format!("window of {len} samples, model expects {}", model_cfg.n_times)));
    }
    let net = Network::new(model_cfg.clone())?;
    let mut params = ModelParams::init(model_cfg, &mut derived(cfg.seed, "init", 0));
    let mut mappings = SequenceMappingSet::init(&collection.dataset_ids(), cfg.n_bins, model_cfg.n_components, cfg.gamma, &mut derived(cfg.seed, "mapping", 0));
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let per_epoch = epoch_len(collection, cfg.epoch_size);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let draws = make_epoch_stream(collection, per_epoch, len, cfg.n_bins, cfg.grid_aligned, &mut derived(cfg.seed, "epoch", epoch as u64))?;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in draws.chunks(cfg.batch_size) {
            let (r, fwd) = run_batch(&net, &params, &mappings, collection, chunk, cfg, Mode::Train, derive_seed(cfg.seed, "dropout", step as u64))?;
            if !r.loss.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch, step });
            }
            let (g_model, g_map) = r.grad.expect("train mode yields gradients");
            {
                let mut ps: Vec<&mut Vec<f64>> = params.trainable_mut().into_iter().map(|(_, t)| t).collect();
                ps.extend(mappings.raw.values_mut());
                let gm = g_model.trainable();
                let mut gs: Vec<&[f64]> = gm.iter().map(|(_, t)| *t).collect();
                gs.extend(g_map.raw.values().map(|v| v.as_slice()));
                opt.step(&mut ps, &gs);
            }
            params.project(model_cfg);
            net.update_running(&mut params, &fwd.expect("train mode keeps the forward cache"));
            if !params.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch, step });
            }
            loss_sum += r.loss * chunk.len() as f64;
            correct += r.correct;
            step += 1;
        }
        let stats = EpochStats { epoch: epoch + 1, mean_loss: loss_sum / draws.len() as f64, bin_accuracy: correct as f64 / draws.len() as f64 };
        on_epoch(&stats);
        curve.push(stats);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("epoch_windows".into(), per_epoch.to_string());
    metadata.insert("epoch_definition".into(), format!("{:?}", cfg.epoch_size));
    metadata.insert("steps".into(), step.to_string());
    metadata.insert("subjects".into(), collection.subjects().into_iter().collect::<Vec<_>>().join(","));
    Ok(Checkpoint {
        model_config: model_cfg.clone(),
        train_config: cfg.clone(),
        electrodes: collection.electrodes.clone(),
        params,
        mappings,
        loss_curve: curve,
        metadata,
    })
}

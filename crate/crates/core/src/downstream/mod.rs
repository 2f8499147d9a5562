//! Frozen-feature classification: a six-parameter motor probe, a
//! forty-parameter sleep probe with L1-normalized weights, the few-shot
//! harness and the evaluation metrics.

mod metrics;
mod probe;

pub use metrics::{confusion, metrics, Metrics};
pub use probe::{normalize_columns, normalize_rows, train_probe, AffineNorm, LinearProbe, ProbeGrad, ProbeLoss, WeightNorm};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{prepare_window, DspError, WindowPreprocess};
use crate::io::{trial_samples, SleepStage, Store};
use crate::model::{ModelError, ModelParams, Network};
use crate::rng::{derive_seed, seeded};
use crate::stats::{mean, sample_std};
use crate::training::{Collection, FoldSplit};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions or features vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("budget of {budget} per class exceeds the {available} training examples of class {class}")]
    BudgetExceedsPool { class: usize, budget: usize, available: usize },
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PartialEq for ProbeError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

/// Number of optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Passes over the training set, `ceil(n / batch)` updates each.
    Epochs(usize),
    /// A fixed number of updates regardless of the training set size.
    Steps(usize),
}

impl Schedule {
    pub fn steps(self, n: usize, batch: usize) -> usize {
        match self {
            Schedule::Epochs(e) => e * n.div_ceil(batch.max(1)),
            Schedule::Steps(s) => s,
        }
    }
}

/// Labeled examples per class. Serialized as a number or `"full"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "BudgetRepr", try_from = "BudgetRepr")]
pub enum Budget {
    PerClass(usize),
    /// Every training example; minority classes are oversampled.
    Full,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Count(usize),
    Name(String),
}

impl From<Budget> for BudgetRepr {
    fn from(b: Budget) -> Self {
        match b {
            Budget::PerClass(n) => BudgetRepr::Count(n),
            Budget::Full => BudgetRepr::Name("full".into()),
        }
    }
}

impl TryFrom<BudgetRepr> for Budget {
    type Error = String;
    fn try_from(r: BudgetRepr) -> Result<Self, String> {
        match r {
            BudgetRepr::Count(n) => Ok(Budget::PerClass(n)),
            BudgetRepr::Name(s) => s.parse(),
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::PerClass(n) => write!(f, "{n}"),
            Budget::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Budget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "full" | "all" => Ok(Budget::Full),
            n => n.parse().map(Budget::PerClass).map_err(|_| format!("bad budget {n:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Latent components fed to the probe.
    pub components: Vec<usize>,
    pub n_classes: usize,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub budget: Budget,
    pub affine_norm: bool,
    pub weight_norm: WeightNorm,
    pub loss: ProbeLoss,
    pub seed: u64,
}

impl ProbeConfig {
    /// Two selected components, 2×2 linear map with biases.
    pub fn motor(components: [usize; 2], seed: u64) -> Self {
        ProbeConfig {
            components: components.to_vec(),
            n_classes: 2,
            schedule: Schedule::Epochs(100),
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            budget: Budget::Full,
            affine_norm: false,
            weight_norm: WeightNorm::None,
            loss: ProbeLoss::Bce,
            seed,
        }
    }

    /// Five components, affine norm plus a column-normalized 5×5 map.
    pub fn sleep(budget: Budget, seed: u64) -> Self {
        ProbeConfig {
            components: (0..5).collect(),
            n_classes: 5,
            schedule: Schedule::Steps(2000),
            batch_size: 32,
            learning_rate: 1e-2,
            weight_decay: 1e-2,
            budget,
            affine_norm: true,
            weight_norm: WeightNorm::Column,
            loss: ProbeLoss::CrossEntropy,
            seed,
        }
    }

    pub fn validate(&self, n_components: usize) -> Result<(), ProbeError> {
        let bad = |m: String| Err(ProbeError::InvalidConfig(m));
        if self.components.is_empty() || self.components.iter().any(|&c| c >= n_components) {
            return bad(format!("components {:?} not within 0..{n_components}", self.components));
        }
        if self.n_classes < 2 || self.batch_size == 0 {
            return bad("need at least 2 classes and a positive batch size".into());
        }
        if self.budget == Budget::PerClass(0) {
            return bad("budget must be at least 1".into());
        }
        Ok(())
    }

    pub fn new_probe(&self, rng: &mut crate::rng::Rng) -> LinearProbe {
        LinearProbe::init(self.components.len(), self.n_classes, self.affine_norm, self.weight_norm, self.loss, rng)
    }
}

/// Latent vectors with labels and the subject each came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledPool {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
}

impl LabeledPool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps only the given feature positions.
    pub fn select(&self, components: &[usize]) -> LabeledPool {
        LabeledPool {
            features: self.features.iter().map(|f| components.iter().map(|&c| f[c]).collect()).collect(),
            labels: self.labels.clone(),
            subjects: self.subjects.clone(),
        }
    }

    fn subset(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|&i| self.features[i].clone()).collect(), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Trains a probe on `pool` (features already restricted to the probe inputs).
pub fn fit_probe(pool: &LabeledPool, cfg: &ProbeConfig) -> Result<LinearProbe, ProbeError> {
    let mut rng = seeded(derive_seed(cfg.seed, "probe", 0));
    let mut probe = cfg.new_probe(&mut rng);
    train_probe(&mut probe, &pool.features, &pool.labels, cfg, &mut rng)?;
    Ok(probe)
}

/// Picks `budget` examples per class from `candidates` without replacement.
pub fn sample_budget(candidates: &[usize], labels: &[usize], n_classes: usize, budget: Budget, rng: &mut crate::rng::Rng) -> Result<Vec<usize>, ProbeError> {
    let Budget::PerClass(n) = budget else {
        return Ok(candidates.to_vec());
    };
    let mut out = Vec::with_capacity(n * n_classes);
    for class in 0..n_classes {
        let members: Vec<usize> = candidates.iter().copied().filter(|&i| labels[i] == class).collect();
        if members.len() < n {
            return Err(ProbeError::BudgetExceedsPool { class, budget: n, available: members.len() });
        }
        out.extend(sample(rng, members.len(), n).into_iter().map(|k| members[k]));
    }
    Ok(out)
}

/// Metrics of one budget across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub budget: Budget,
    pub folds: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
    /// How per-class F1 scores are combined.
    pub f1_average: String,
}

impl MetricReport {
    pub fn from_folds(budget: Budget, folds: Vec<Metrics>) -> Self {
        let col = |f: fn(&Metrics) -> f64| folds.iter().map(f).collect::<Vec<f64>>();
        let (a, u, f) = (col(|m| m.accuracy), col(|m| m.uar), col(|m| m.macro_f1));
        MetricReport {
            budget,
            mean: Metrics { accuracy: mean(&a), uar: mean(&u), macro_f1: mean(&f) },
            std: Metrics { accuracy: sample_std(&a), uar: sample_std(&u), macro_f1: sample_std(&f) },
            folds,
            f1_average: "macro".into(),
        }
    }
}

/// For each budget and fold: sample the budget from the fold's training
/// subjects, train a fresh probe and score it on the fold's validation
/// subjects. Cells run in parallel and are seeded by `(budget, fold)`.
pub fn fewshot_curve(pool: &LabeledPool, split: &FoldSplit, budgets: &[Budget], cfg: &ProbeConfig) -> Result<Vec<MetricReport>, ProbeError> {
    let folds: Vec<usize> = (0..split.k).collect();
    let cells = fewshot_cells(pool, split, &folds, budgets, cfg)?;
    Ok(budgets.iter().zip(cells).map(|(&b, m)| MetricReport::from_folds(b, m)).collect())
}

/// Per-budget metrics for the listed folds only, `out[budget][i]` for
/// `folds[i]`.
pub fn fewshot_cells(pool: &LabeledPool, split: &FoldSplit, folds: &[usize], budgets: &[Budget], cfg: &ProbeConfig) -> Result<Vec<Vec<Metrics>>, ProbeError> {
    if pool.is_empty() {
        return Err(ProbeError::EmptyInput);
    }
    if let Some(&f) = folds.iter().find(|&&f| f >= split.k) {
        return Err(ProbeError::InvalidConfig(format!("fold {f} of {}", split.k)));
    }
    let inputs = pool.select(&cfg.components);
    let cells: Vec<(usize, usize)> = (0..budgets.len()).flat_map(|b| folds.iter().map(move |&f| (b, f))).collect();
    let results: Vec<Metrics> = cells
        .par_iter()
        .map(|&(b, f)| -> Result<Metrics, ProbeError> {
            let train_subj = split.training_subjects(f);
            let val_subj = split.validation_subjects(f);
            let train_idx: Vec<usize> = (0..inputs.len()).filter(|&i| train_subj.contains(&inputs.subjects[i])).collect();
            let test_idx: Vec<usize> = (0..inputs.len()).filter(|&i| val_subj.contains(&inputs.subjects[i])).collect();
            if test_idx.is_empty() || train_idx.is_empty() {
                return Err(ProbeError::EmptyInput);
            }
            let mut rng = seeded(derive_seed(cfg.seed, &format!("fewshot-{}", budgets[b]), f as u64));
            let chosen = sample_budget(&train_idx, &inputs.labels, cfg.n_classes, budgets[b], &mut rng)?;
            let (x, y) = inputs.subset(&chosen);
            let mut probe = cfg.new_probe(&mut rng);
            train_probe(&mut probe, &x, &y, cfg, &mut rng)?;
            let (tx, ty) = inputs.subset(&test_idx);
            metrics(&probe.predict(&tx), &ty)
        })
        .collect::<Result<_, _>>()?;
    Ok(results.chunks(folds.len()).map(|c| c.to_vec()).collect())
}

/// Rows `metric,method,budget,mean,std`.
pub fn write_fewshot_csv(path: &Path, method: &str, reports: &[MetricReport]) -> Result<(), ProbeError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "method", "budget", "mean", "std"])?;
    for (name, get) in [("accuracy", (|m: &Metrics| m.accuracy) as fn(&Metrics) -> f64), ("uar", |m| m.uar), ("macro_f1", |m| m.macro_f1)] {
        for r in reports {
            w.write_record([name.to_string(), method.to_string(), r.budget.to_string(), format!("{:.6}", get(&r.mean)), format!("{:.6}", get(&r.std))])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn latents_of(net: &Network, params: &ModelParams, windows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ProbeError> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(64) {
        let refs: Vec<&[f64]> = chunk.iter().map(|v| v.as_slice()).collect();
        out.extend(net.latents(params, &refs)?.into_iter().map(|z| z.0));
    }
    Ok(out)
}

/// Latents of every labeled epoch: window `i` covers samples
/// `[i·T, (i+1)·T)` of each labeled trial.
pub fn sleep_pool(
    net: &Network,
    params: &ModelParams,
    store: &Store,
    labels: &BTreeMap<String, Vec<SleepStage>>,
    electrodes: &[String],
    pre: &WindowPreprocess,
) -> Result<LabeledPool, ProbeError> {
    let cfg = net.config();
    let len = cfg.n_times;
    let mut pool = LabeledPool::default();
    for table in &store.tables {
        for t in &table.trials {
            let (Some(stages), Some(rec)) = (labels.get(&t.recording), store.recording(&t.recording)) else { continue };
            let rec = crate::io::select_channels(rec, electrodes).map_err(|e| ProbeError::InvalidConfig(format!("missing channel {}", e.0)))?;
            let data = trial_samples(&rec, t);
            let mut windows = Vec::new();
            let mut ys = Vec::new();
            for (i, s) in stages.iter().enumerate() {
                let start = i * len;
                if start < t.valid.0 || start + len > t.valid.1 {
                    continue;
                }
                windows.push(prepare_window(&data, start, len, cfg.fs, pre)?.iter().copied().collect::<Vec<f64>>());
                ys.push(s.index());
            }
            pool.features.extend(latents_of(net, params, &windows)?);
            pool.subjects.extend(std::iter::repeat_n(t.subject_id.clone(), ys.len()));
            pool.labels.extend(ys);
        }
    }
    Ok(pool)
}

/// Which part of a motor trial a probe example comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotorWindow {
    ActionStart,
    PostAction,
    PreTrialBaseline,
    /// Action-start window of trials tagged `control`.
    ControlTrial,
}

/// Action onset and offset in seconds from trial start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorTiming {
    pub action_start: f64,
    pub action_end: f64,
}

/// Binary pool: label 1 for `positive` windows, 0 for `negative` windows.
/// `timing` maps dataset id to its trial timing.
pub fn motor_pool(
    net: &Network,
    params: &ModelParams,
    collection: &Collection,
    timing: &BTreeMap<String, MotorTiming>,
    positive: MotorWindow,
    negative: MotorWindow,
    pre: &WindowPreprocess,
) -> Result<LabeledPool, ProbeError> {
    let len = net.config().n_times;
    let fs = collection.fs;
    let mut windows = Vec::new();
    let mut pool = LabeledPool::default();
    for ds in &collection.datasets {
        let tm = timing.get(&ds.id).ok_or_else(|| ProbeError::InvalidConfig(format!("no timing for dataset {}", ds.id)))?;
        for t in &ds.trials {
            let is_control = t.trial.condition.as_deref() == Some("control");
            for (label, which) in [(1usize, positive), (0, negative)] {
                if (which == MotorWindow::ControlTrial) != is_control {
                    continue;
                }
                let at = match which {
                    MotorWindow::ActionStart | MotorWindow::ControlTrial => tm.action_start,
                    MotorWindow::PostAction => tm.action_end,
                    MotorWindow::PreTrialBaseline => 0.0,
                };
                let (v0, v1) = t.trial.valid;
                if v1 < v0 + len {
                    continue;
                }
                let start = ((at * fs).round() as usize).clamp(v0, v1 - len);
                windows.push(prepare_window(&t.data, start, len, fs, pre)?.iter().copied().collect::<Vec<f64>>());
                pool.labels.push(label);
                pool.subjects.push(t.trial.subject_id.clone());
            }
        }
    }
    pool.features = latents_of(net, params, &windows)?;
    Ok(pool)
}

/// Latent-pool helper shared by callers that hold raw windows.
pub fn window_latents(net: &Network, params: &ModelParams, windows: &[Array2<f64>]) -> Result<Vec<Vec<f64>>, ProbeError> {
    let flat: Vec<Vec<f64>> = windows.iter().map(|w| w.iter().copied().collect()).collect();
    latents_of(net, params, &flat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::seeded;
    use rand::Rng;

    fn split(subjects: &[&str], k: usize) -> FoldSplit {
        let s: Vec<String> = subjects.iter().map(|s| s.to_string()).collect();
        crate::training::split_folds(&s, k, 0).unwrap()
    }

    fn gaussian_pool(n_per_class: usize, n_classes: usize, dims: usize, sep: f64, seed: u64, subjects: &[&str]) -> LabeledPool {
        let mut rng = seeded(seed);
        let mut pool = LabeledPool::default();
        for i in 0..n_per_class * n_classes {
            let c = i % n_classes;
            pool.features.push((0..dims).map(|d| rng.random_range(-1.0..1.0) + if d == c % dims { sep } else { 0.0 }).collect());
            pool.labels.push(c);
            pool.subjects.push(subjects[i % subjects.len()].to_string());
        }
        pool
    }

    #[test]
    fn budget_json() {
        let b: Vec<Budget> = serde_json::from_str(r#"[1, 10, "full"]"#).unwrap();
        assert_eq!(b, vec![Budget::PerClass(1), Budget::PerClass(10), Budget::Full]);
        assert_eq!(serde_json::to_string(&b).unwrap(), r#"[1,10,"full"]"#);
        assert!(serde_json::from_str::<Budget>(r#""some""#).is_err());
    }

    #[test]
    fn budget_one_gives_one_per_class() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let idx: Vec<usize> = (0..50).collect();
        let chosen = sample_budget(&idx, &labels, 5, Budget::PerClass(1), &mut seeded(0)).unwrap();
        assert_eq!(chosen.len(), 5);
        let mut classes: Vec<usize> = chosen.iter().map(|&i| labels[i]).collect();
        classes.sort();
        assert_eq!(classes, vec![0, 1, 2, 3, 4]);
        assert!(matches!(
            sample_budget(&idx, &labels, 5, Budget::PerClass(11), &mut seeded(0)),
            Err(ProbeError::BudgetExceedsPool { budget: 11, available: 10, .. })
        ));
    }

    #[test]
    fn motor_probe_separable_capacity() {
        let pool = gaussian_pool(100, 2, 2, 4.0, 1, &["a"]);
        let cfg = ProbeConfig::motor([0, 1], 3);
        let probe = fit_probe(&pool, &cfg).unwrap();
        assert_eq!(probe.n_params(), 6);
        let m = metrics(&probe.predict(&pool.features), &pool.labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn shuffled_labels_give_chance() {
        // Features carry no label information; validation UAR sits at 0.5.
        let mut rng = seeded(5);
        let mut train = gaussian_pool(200, 2, 2, 0.0, 6, &["a"]);
        for i in (1..train.len()).rev() {
            let j = rng.random_range(0..=i);
            train.labels.swap(i, j);
        }
        let probe = fit_probe(&train, &ProbeConfig::motor([0, 1], 7)).unwrap();
        let val = gaussian_pool(2000, 2, 2, 0.0, 8, &["b"]);
        let m = metrics(&probe.predict(&val.features), &val.labels).unwrap();
        assert!((m.uar - 0.5).abs() <= 0.05, "{}", m.uar);
    }

    #[test]
    fn oracle_latents_budget_one() {
        let subjects = ["s0", "s1", "s2", "s3"];
        let mut pool = LabeledPool::default();
        for i in 0..200 {
            let c = i % 5;
            pool.features.push((0..5).map(|d| if d == c { 1.0 } else { 0.0 }).collect());
            pool.labels.push(c);
            pool.subjects.push(subjects[(i / 5) % 4].to_string());
        }
        let reports = fewshot_curve(&pool, &split(&subjects, 4), &[Budget::PerClass(1)], &ProbeConfig::sleep(Budget::PerClass(1), 0)).unwrap();
        assert_eq!(reports[0].folds.len(), 4);
        assert_eq!(reports[0].mean.uar, 1.0);
    }

    #[test]
    fn fewshot_is_deterministic_and_frozen() {
        let subjects = ["s0", "s1", "s2"];
        let pool = gaussian_pool(30, 5, 5, 2.0, 2, &subjects);
        let sp = split(&subjects, 3);
        let cfg = ProbeConfig { schedule: Schedule::Steps(200), ..ProbeConfig::sleep(Budget::PerClass(2), 1) };
        let budgets = [Budget::PerClass(1), Budget::PerClass(2), Budget::Full];
        let a = fewshot_curve(&pool, &sp, &budgets, &cfg).unwrap();
        let b = fewshot_curve(&pool, &sp, &budgets, &cfg).unwrap();
        assert_eq!(a, b);

        // Feature extraction reads the extractor without touching it.
        let mcfg = ModelConfig { n_times: 64, kernel1: 9, kernel2: 5, ..ModelConfig::motor(3, 5) };
        let net = Network::new(mcfg.clone()).unwrap();
        let params = ModelParams::init(&mcfg, &mut seeded(3));
        let before = params.checksum();
        let windows: Vec<Array2<f64>> = (0..4).map(|k| Array2::from_shape_fn((3, 64), |(e, t)| ((e * 7 + t * k) as f64).sin())).collect();
        let feats = window_latents(&net, &params, &windows).unwrap();
        assert_eq!(feats.len(), 4);
        assert_eq!(params.checksum(), before);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let m = Metrics { accuracy: 0.5, uar: 0.25, macro_f1: 0.125 };
        let reports = vec![MetricReport::from_folds(Budget::PerClass(1), vec![m, m]), MetricReport::from_folds(Budget::Full, vec![m])];
        let p = dir.path().join("t.csv");
        write_fewshot_csv(&p, "eegd3", &reports).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "metric,method,budget,mean,std");
        assert_eq!(lines[1], "accuracy,eegd3,1,0.500000,0.000000");
        assert_eq!(lines.len(), 7);
        assert!(text.contains("macro_f1,eegd3,full,0.125000,0.000000"));
    }
}

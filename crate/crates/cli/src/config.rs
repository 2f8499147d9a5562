//! Run configuration. Every section is optional; missing values fall back
//! to the scenario defaults. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use eegd3::downstream::{Budget, MotorTiming, MotorWindow, ProbeConfig, Schedule, WeightNorm};
use eegd3::dsp::WindowPreprocess;
use eegd3::model::ModelConfig;
use eegd3::synth::blink::BlinkProbeConfig;
use eegd3::synth::sleep::SleepSynthConfig;
use eegd3::synth::{Envelope, SynthConfig};
use eegd3::training::{EpochSize, TrainConfig};

pub const STORE_ENV: &str = "EEGD3_STORE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Motor,
    Sleep,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub out: Option<PathBuf>,
    pub io: IoSection,
    pub dsp: Option<WindowPreprocess>,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub interpret: InterpretSection,
    pub downstream: DownstreamSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Store directory; the `EEGD3_STORE` variable is used when absent.
    pub store: Option<PathBuf>,
    /// Electrode subset; defaults to the channels every recording shares.
    pub electrodes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_components: Option<usize>,
    pub spatial_filters: Option<usize>,
    pub f1: Option<usize>,
    pub f2: Option<usize>,
    pub kernel1: Option<usize>,
    pub pool1: Option<usize>,
    pub kernel2: Option<usize>,
    pub dropout: Option<f64>,
    pub filter_init: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub folds: usize,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub window_seconds: Option<f64>,
    pub n_bins: Option<usize>,
    pub smoothing: Option<f64>,
    pub epoch_size: Option<EpochSize>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            folds: 4,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            weight_decay: None,
            window_seconds: None,
            n_bins: None,
            smoothing: None,
            epoch_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretSection {
    pub stride: usize,
    pub surrogates: usize,
}

impl Default for InterpretSection {
    fn default() -> Self {
        InterpretSection { stride: eegd3::interpret::DEFAULT_STRIDE, surrogates: 199 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownstreamSection {
    pub budgets: Vec<Budget>,
    /// Motor probe inputs; picked from the training pool when absent.
    pub components: Option<Vec<usize>>,
    pub positive: MotorWindow,
    pub negative: MotorWindow,
    /// Per-dataset action timing; derived from the synthetic scene when absent.
    pub timing: Option<BTreeMap<String, MotorTiming>>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub steps: Option<usize>,
    pub weight_norm: Option<WeightNorm>,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        DownstreamSection {
            budgets: [1, 2, 4, 10, 100].into_iter().map(Budget::PerClass).collect(),
            components: None,
            positive: MotorWindow::ActionStart,
            negative: MotorWindow::PreTrialBaseline,
            timing: None,
            learning_rate: None,
            weight_decay: None,
            steps: None,
            weight_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub subjects_per_dataset: Option<usize>,
    pub trials_per_subject: Option<usize>,
    pub snr_db: Option<f64>,
    pub n_recordings: Option<usize>,
    pub epochs_per_recording: Option<usize>,
    pub blink_steps: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn store_dir(&self) -> Result<PathBuf> {
        if let Some(p) = &self.io.store {
            return Ok(p.clone());
        }
        match std::env::var_os(STORE_ENV) {
            Some(p) => Ok(PathBuf::from(p)),
            None => bail!("no store given: set io.store in the config or {STORE_ENV}"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        let base = match self.scenario {
            Scenario::Motor => TrainConfig::motor(self.seed),
            // Desk-scale nights: 4 s epochs, 160 windows per night and epoch.
            Scenario::Sleep => TrainConfig { epochs: 20, window_seconds: 4.0, epoch_size: EpochSize::PerDataset(160), ..TrainConfig::sleep(self.seed) },
        };
        TrainConfig {
            epochs: t.epochs.unwrap_or(base.epochs),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            weight_decay: t.weight_decay.unwrap_or(base.weight_decay),
            window_seconds: t.window_seconds.unwrap_or(base.window_seconds),
            n_bins: t.n_bins.unwrap_or(base.n_bins),
            smoothing: t.smoothing.unwrap_or(base.smoothing),
            epoch_size: t.epoch_size.unwrap_or(base.epoch_size),
            preprocess: self.dsp.clone().unwrap_or(base.preprocess.clone()),
            ..base
        }
    }

    pub fn model_config(&self, n_electrodes: usize, fs: f64) -> ModelConfig {
        let m = &self.model;
        let n_times = self.train_config().window_len(fs);
        let base = match self.scenario {
            Scenario::Motor => ModelConfig { n_times, fs, ..ModelConfig::motor(n_electrodes, 6) },
            Scenario::Sleep => ModelConfig { kernel1: 33, pool1: 8, kernel2: 9, ..ModelConfig::sleep(n_electrodes, 5, n_times, fs) },
        };
        ModelConfig {
            n_components: m.n_components.unwrap_or(base.n_components),
            spatial_filters: m.spatial_filters.unwrap_or(base.spatial_filters),
            f1: m.f1.unwrap_or(base.f1),
            f2: m.f2.unwrap_or(base.f2),
            kernel1: m.kernel1.unwrap_or(base.kernel1),
            pool1: m.pool1.unwrap_or(base.pool1),
            kernel2: m.kernel2.unwrap_or(base.kernel2),
            dropout: m.dropout.unwrap_or(base.dropout),
            filter_init: m.filter_init.unwrap_or(base.filter_init),
            ..base
        }
    }

    pub fn motor_synth(&self) -> SynthConfig {
        let s = &self.synth;
        let base = SynthConfig::motor_default(self.seed);
        SynthConfig {
            subjects_per_dataset: s.subjects_per_dataset.unwrap_or(base.subjects_per_dataset),
            trials_per_subject: s.trials_per_subject.unwrap_or(base.trials_per_subject),
            snr_db: s.snr_db.map(Some).unwrap_or(base.snr_db),
            ..base
        }
    }

    pub fn sleep_synth(&self) -> SleepSynthConfig {
        let s = &self.synth;
        let base = SleepSynthConfig::default_scene(self.seed);
        SleepSynthConfig {
            n_recordings: s.n_recordings.unwrap_or(base.n_recordings),
            epochs_per_recording: s.epochs_per_recording.unwrap_or(base.epochs_per_recording),
            snr_db: s.snr_db.unwrap_or(base.snr_db),
            ..base
        }
    }

    pub fn blink_config(&self) -> BlinkProbeConfig {
        let base = BlinkProbeConfig { seed: self.seed, ..Default::default() };
        BlinkProbeConfig { steps: self.synth.blink_steps.unwrap_or(base.steps), ..base }
    }

    /// Action timing per dataset, from the config or from the dip of the
    /// scene source named `erd`.
    pub fn motor_timing(&self) -> Result<BTreeMap<String, MotorTiming>> {
        if let Some(t) = &self.downstream.timing {
            return Ok(t.clone());
        }
        let scene = self.motor_synth();
        let k = scene.sources.iter().position(|s| s.name == "erd").context("scene has no erd source; set downstream.timing")?;
        scene
            .datasets
            .iter()
            .map(|d| match &d.envelopes[k] {
                Envelope::Dip { start, end, .. } => Ok((d.id.clone(), MotorTiming { action_start: *start, action_end: *end })),
                other => bail!("erd envelope of {} is {other:?}, not a dip", d.id),
            })
            .collect()
    }

    pub fn probe_config(&self, base: ProbeConfig) -> ProbeConfig {
        let d = &self.downstream;
        ProbeConfig {
            learning_rate: d.learning_rate.unwrap_or(base.learning_rate),
            weight_decay: d.weight_decay.unwrap_or(base.weight_decay),
            schedule: d.steps.map(Schedule::Steps).unwrap_or(base.schedule),
            weight_norm: d.weight_norm.unwrap_or(base.weight_norm),
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.training.folds, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"components": 3}}"#).is_err());
    }

    #[test]
    fn overrides_apply() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "training": {"epochs": 2}, "model": {"n_components": 3}}"#).unwrap();
        assert_eq!(c.train_config().epochs, 2);
        assert_eq!(c.train_config().seed, 3);
        let m = c.model_config(16, 160.0);
        assert_eq!((m.n_components, m.n_times), (3, 240));
        let t = c.motor_timing().unwrap();
        assert_eq!(t["synA"].action_end, 5.5);
    }
}

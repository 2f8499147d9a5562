//! Synthetic overnight recordings with a hypnogram.
//!
//! Every stage switches on one marker rhythm while the others idle at a low
//! level. Each recording is its own dataset so the pretext task sees one
//! sequence mapping per night.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{band_noise, pink_noise};
use crate::io::{assemble_store, write_stage_labels, write_store, RecordingBuffer, SleepStage, StageLabel, Store, StoreError, Trial, TrialTable};
use crate::rng::derived;

pub const SLEEP_ELECTRODES: [&str; 8] = ["Fz", "F3", "F4", "C3", "C4", "Pz", "O1", "O2"];

/// A stage marker: band-limited rhythm, optionally gated into bursts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageMarker {
    pub stage: SleepStage,
    pub band: (f64, f64),
    pub pattern: Vec<f64>,
    pub amplitude: f64,
    /// Bursts per second; `None` means continuous.
    pub burst_rate: Option<f64>,
    pub burst_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SleepSynthConfig {
    pub electrodes: Vec<String>,
    pub fs: f64,
    pub epoch_seconds: f64,
    pub epochs_per_recording: usize,
    pub n_recordings: usize,
    pub markers: Vec<StageMarker>,
    /// Level of a marker outside its own stage.
    pub idle_level: f64,
    /// Per-epoch multiplicative jitter of the active level.
    pub level_jitter: f64,
    /// Stage durations in epochs are uniform on this range.
    pub stage_epochs: (usize, usize),
    pub snr_db: f64,
    pub seed: u64,
}

fn weights(electrodes: &[&str], w: &[(&str, f64)]) -> Vec<f64> {
    electrodes.iter().map(|e| w.iter().find(|(n, _)| n == e).map_or(0.0, |p| p.1)).collect()
}

impl SleepSynthConfig {
    pub fn default_scene(seed: u64) -> Self {
        let el = SLEEP_ELECTRODES;
        let marker = |stage, band, w: &[(&str, f64)], amplitude, burst_rate| StageMarker {
            stage,
            band,
            pattern: weights(&el, w),
            amplitude,
            burst_rate,
            burst_width: 0.4,
        };
        SleepSynthConfig {
            electrodes: el.iter().map(|s| s.to_string()).collect(),
            fs: 64.0,
            epoch_seconds: 4.0,
            epochs_per_recording: 320,
            n_recordings: 12,
            markers: vec![
                marker(SleepStage::W, (8.5, 11.5), &[("O1", 1.0), ("O2", 1.0), ("Pz", 0.6)], 1.0, None),
                marker(SleepStage::N1, (4.0, 7.0), &[("C3", 0.8), ("C4", 0.8), ("Fz", 0.5), ("Pz", 0.5)], 1.0, None),
                marker(SleepStage::N2, (12.0, 14.0), &[("C3", 1.0), ("C4", 1.0), ("Fz", 0.4)], 1.6, Some(0.5)),
                marker(SleepStage::N3, (0.8, 2.5), &[("Fz", 1.0), ("F3", 0.9), ("F4", 0.9)], 1.5, None),
                marker(SleepStage::REM, (18.0, 26.0), &[("F3", 1.0), ("F4", 1.0), ("Fz", 0.5)], 1.0, None),
            ],
            idle_level: 0.15,
            level_jitter: 0.2,
            stage_epochs: (6, 24),
            snr_db: 0.0,
            seed,
        }
    }

    pub fn epoch_len(&self) -> usize {
        (self.epoch_seconds * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_recordings == 0 || self.epochs_per_recording == 0 || self.epoch_len() == 0 {
            return Err("empty sleep scene".into());
        }
        if self.stage_epochs.0 == 0 || self.stage_epochs.0 > self.stage_epochs.1 {
            return Err(format!("bad stage duration range {:?}", self.stage_epochs));
        }
        for m in &self.markers {
            if m.pattern.len() != self.electrodes.len() {
                return Err(format!("marker for {} has {} weights for {} electrodes", m.stage, m.pattern.len(), self.electrodes.len()));
            }
        }
        Ok(())
    }
}

fn next_stage<R: Rng + ?Sized>(s: SleepStage, rng: &mut R) -> SleepStage {
    use SleepStage::*;
    let u: f64 = rng.random();
    match s {
        W => N1,
        N1 => {
            if u < 0.75 {
                N2
            } else {
                W
            }
        }
        N2 => {
            if u < 0.5 {
                N3
            } else if u < 0.8 {
                REM
            } else {
                N1
            }
        }
        N3 => {
            if u < 0.8 {
                N2
            } else {
                N1
            }
        }
        REM => {
            if u < 0.6 {
                N1
            } else {
                W
            }
        }
    }
}

/// Semi-Markov hypnogram starting awake.
pub fn hypnogram<R: Rng + ?Sized>(n_epochs: usize, durations: (usize, usize), rng: &mut R) -> Vec<SleepStage> {
    let mut out = Vec::with_capacity(n_epochs);
    let mut stage = SleepStage::W;
    while out.len() < n_epochs {
        let d = rng.random_range(durations.0..=durations.1);
        out.extend(std::iter::repeat_n(stage, d.min(n_epochs - out.len())));
        stage = next_stage(stage, rng);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SleepSynthOutput {
    pub store: Store,
    pub recording_names: Vec<String>,
    /// Stage of each epoch, per recording.
    pub labels: BTreeMap<String, Vec<SleepStage>>,
    pub epoch_len: usize,
}

impl SleepSynthOutput {
    /// Store into `dir`, one `labels/<recording>.csv` per night.
    pub fn write(&self, dir: &Path) -> Result<(), StoreError> {
        write_store(dir, &self.store.tables, &self.recording_names, &self.store.recordings, self.store.manifest.notes.clone())?;
        std::fs::create_dir_all(dir.join("labels"))?;
        for (name, stages) in &self.labels {
            let rows: Vec<StageLabel> = stages.iter().enumerate().map(|(i, &stage)| StageLabel { epoch_index: i, stage }).collect();
            write_stage_labels(&dir.join("labels").join(format!("{name}.csv")), &rows)?;
        }
        Ok(())
    }
}

fn generate_night(cfg: &SleepSynthConfig, r: usize) -> (Array2<f64>, Vec<SleepStage>) {
    let mut rng = derived(cfg.seed, "night", r as u64);
    let (e, el) = (cfg.electrodes.len(), cfg.epoch_len());
    let n = el * cfg.epochs_per_recording;
    let fs = cfg.fs;
    let stages = hypnogram(cfg.epochs_per_recording, cfg.stage_epochs, &mut rng);
    let mut x = Array2::<f64>::zeros((e, n));
    for m in &cfg.markers {
        let carrier = band_noise(n, fs, m.band.0, m.band.1, &mut rng);
        let mut level: Vec<f64> = stages
            .iter()
            .flat_map(|&s| {
                let v = if s == m.stage { 1.0 + cfg.level_jitter * rng.random_range(-1.0..=1.0) } else { cfg.idle_level };
                std::iter::repeat_n(v, el)
            })
            .collect();
        if let Some(rate) = m.burst_rate {
            // Gate the active stretches with Gaussian bursts.
            let n_bursts = (rate * n as f64 / fs).round() as usize;
            let mut gate = vec![0.0; n];
            let w = m.burst_width * fs;
            for _ in 0..n_bursts {
                let c = rng.random_range(0.0..n as f64);
                let lo = (c - 3.0 * w).max(0.0) as usize;
                let hi = ((c + 3.0 * w) as usize).min(n);
                for (i, g) in gate.iter_mut().enumerate().take(hi).skip(lo) {
                    let d = (i as f64 - c) / w;
                    *g = f64::max(*g, (-0.5 * d * d).exp());
                }
            }
            for (i, l) in level.iter_mut().enumerate() {
                if stages[i / el] == m.stage {
                    *l *= 0.2 + 0.8 * gate[i];
                }
            }
        }
        let norm = m.pattern.iter().map(|w| w * w).sum::<f64>().sqrt();
        for (ch, w) in m.pattern.iter().enumerate() {
            if *w != 0.0 {
                let g = m.amplitude * w / norm;
                for ((o, c), l) in x.row_mut(ch).iter_mut().zip(&carrier).zip(&level) {
                    *o += g * c * l;
                }
            }
        }
    }
    let power = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let sd = (power / (e as f64 * 10f64.powf(cfg.snr_db / 10.0))).sqrt();
    for mut row in x.outer_iter_mut() {
        let noise = pink_noise(n, fs, &mut rng);
        row.iter_mut().zip(noise).for_each(|(o, v)| *o += sd * v);
    }
    (x, stages)
}

/// One recording per subject and per dataset, reproducible from `cfg.seed`.
pub fn generate_sleep(cfg: &SleepSynthConfig) -> Result<SleepSynthOutput, String> {
    cfg.validate()?;
    let nights: Vec<(Array2<f64>, Vec<SleepStage>)> = (0..cfg.n_recordings).into_par_iter().map(|r| generate_night(cfg, r)).collect();
    let el = cfg.epoch_len();
    let n = el * cfg.epochs_per_recording;
    let (mut tables, mut names, mut recs, mut labels) = (Vec::new(), Vec::new(), Vec::new(), BTreeMap::new());
    for (r, (x, stages)) in nights.into_iter().enumerate() {
        let name = format!("night_{r:02}");
        let subject = format!("sleeper-{r:02}");
        tables.push(TrialTable {
            dataset_id: name.clone(),
            trial_seconds: n as f64 / cfg.fs,
            trials: vec![Trial { recording: name.clone(), start: 0, length: n, subject_id: subject.clone(), valid: (0, n), condition: None }],
        });
        let mut rec = RecordingBuffer::new(x.mapv(|v| v as f32), cfg.fs, cfg.electrodes.clone(), subject);
        rec.unitless = true;
        rec.reference = "synthetic".into();
        names.push(name.clone());
        recs.push(rec);
        labels.insert(name, stages);
    }
    let notes = vec![format!("synthetic sleep scene, seed {}", cfg.seed)];
    let store = assemble_store(tables, &names, recs, notes).map_err(|e| e.to_string())?;
    Ok(SleepSynthOutput { store, recording_names: names, labels, epoch_len: el })
}

//! Synthetic trial-structured EEG with known source envelopes.
//!
//! Each source is a unit-norm spatial pattern times an envelope-modulated
//! carrier. Datasets share the sources but schedule their envelopes
//! differently within the trial. Background is independent pink noise per
//! channel at a fixed SNR relative to the summed source power.

pub mod blink;
mod score;
pub mod sleep;

pub use score::{score_disentanglement, score_timecourses, window_mean, DisentanglementScore};

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::RealFft;
use crate::io::{assemble_store, read_tensor, write_store, write_tensor, RecordingBuffer, Store, StoreError, Trial, TrialTable};
use crate::rng::derived;

pub const DEFAULT_ELECTRODES: [&str; 16] = ["Fp1", "Fp2", "F3", "Fz", "F4", "C3", "Cz", "C4", "T7", "T8", "P3", "Pz", "P4", "O1", "Oz", "O2"];

/// Signal generator of one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Carrier {
    /// Unit-RMS Gaussian noise restricted to `[lo, hi]` Hz.
    Band { lo: f64, hi: f64 },
    /// Cosine at `freq` Hz phase-locked to the envelope centre.
    Locked { freq: f64 },
    /// Sharp biphasic pulse (width `sigma` seconds) at each event.
    Pulse { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    /// Mixing weights over the scene electrodes; normalized to unit norm.
    pub pattern: Vec<f64>,
    pub carrier: Carrier,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    pub center: f64,
    pub jitter: f64,
    pub prob: f64,
}

/// Envelope schedule in seconds from trial start; values stay in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    Constant {
        level: f64,
    },
    /// `1 − depth` inside `[start, end]` with raised-cosine ramps.
    Dip {
        start: f64,
        end: f64,
        depth: f64,
        ramp: f64,
    },
    /// `base + (1 − base)·exp(−(t − center)²/(2·width²))`.
    Bump {
        center: f64,
        width: f64,
        base: f64,
    },
    /// Random events (Poisson), thinned inside `quiet`, plus an optional
    /// aligned burst. Each event contributes a Gaussian of `width`.
    Events {
        rate: f64,
        quiet: (f64, f64),
        quiet_rate: f64,
        burst: Option<Burst>,
        width: f64,
    },
}

fn ramp_up(t: f64, a: f64, ramp: f64) -> f64 {
    if ramp <= 0.0 {
        return if t >= a { 1.0 } else { 0.0 };
    }
    let u = ((t - a) / ramp).clamp(0.0, 1.0);
    0.5 - 0.5 * (std::f64::consts::PI * u).cos()
}

impl Envelope {
    /// Event times for one trial; empty for deterministic profiles.
    pub fn draw_events<R: Rng + ?Sized>(&self, duration: f64, shift: f64, rng: &mut R) -> Vec<f64> {
        let Envelope::Events { rate, quiet, quiet_rate, burst, .. } = self else {
            return Vec::new();
        };
        let peak = rate.max(*quiet_rate);
        let mut out = Vec::new();
        if peak > 0.0 {
            let mut t = 0.0;
            loop {
                let u: f64 = rng.random();
                t += -(1.0 - u).ln() / peak;
                if t >= duration {
                    break;
                }
                let here = if t >= quiet.0 + shift && t <= quiet.1 + shift { *quiet_rate } else { *rate };
                if rng.random::<f64>() < here / peak {
                    out.push(t);
                }
            }
        }
        if let Some(b) = burst {
            if rng.random::<f64>() < b.prob {
                out.push(b.center + shift + rng.random_range(-b.jitter..=b.jitter));
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// Envelope value at `t` for a trial shifted by `shift` seconds.
    pub fn value(&self, t: f64, shift: f64, events: &[f64]) -> f64 {
        match *self {
            Envelope::Constant { level } => level,
            Envelope::Dip { start, end, depth, ramp } => {
                let (a, b) = (start + shift, end + shift);
                let inside = ramp_up(t, a, ramp) * (1.0 - ramp_up(t, b - ramp.max(0.0), ramp));
                1.0 - depth * inside
            }
            Envelope::Bump { center, width, base } => {
                let d = t - center - shift;
                base + (1.0 - base) * (-d * d / (2.0 * width * width)).exp()
            }
            Envelope::Events { width, .. } => events.iter().map(|&e| (-(t - e).powi(2) / (2.0 * width * width)).exp()).fold(0.0, f64::max),
        }
    }

    fn center(&self, shift: f64) -> f64 {
        match *self {
            Envelope::Bump { center, .. } => center + shift,
            Envelope::Dip { start, end, .. } => 0.5 * (start + end) + shift,
            _ => shift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetScene {
    pub id: String,
    /// One envelope per source, in source order.
    pub envelopes: Vec<Envelope>,
    /// Uniform per-trial timing jitter (seconds) applied to every envelope.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub electrodes: Vec<String>,
    pub fs: f64,
    pub trial_seconds: f64,
    pub subjects_per_dataset: usize,
    pub trials_per_subject: usize,
    pub sources: Vec<SourceSpec>,
    pub datasets: Vec<DatasetScene>,
    /// Source-to-noise power ratio in dB; `None` disables noise.
    pub snr_db: Option<f64>,
    /// Half-width of the uniform per-trial amplitude gain around 1.
    pub gain_spread: f64,
    pub seed: u64,
}

fn pattern(electrodes: &[&str], weights: &[(&str, f64)]) -> Vec<f64> {
    electrodes.iter().map(|e| weights.iter().find(|(n, _)| n == e).map_or(0.0, |w| w.1)).collect()
}

impl SynthConfig {
    /// Two datasets, four sources (blink, ERP, ERD, ERS), 16 electrodes.
    pub fn motor_default(seed: u64) -> Self {
        let el = DEFAULT_ELECTRODES;
        let sources = vec![
            SourceSpec {
                name: "blink".into(),
                pattern: pattern(&el, &[("Fp1", 1.0), ("Fp2", 1.0), ("F3", 0.35), ("Fz", 0.45), ("F4", 0.35)]),
                carrier: Carrier::Pulse { sigma: 0.035 },
                amplitude: 6.0,
            },
            SourceSpec {
                name: "erp".into(),
                pattern: pattern(&el, &[("Pz", 1.0), ("P3", 0.6), ("P4", 0.6), ("O1", 0.5), ("Oz", 0.7), ("O2", 0.5)]),
                carrier: Carrier::Locked { freq: 10.0 },
                amplitude: 2.0,
            },
            SourceSpec {
                name: "erd".into(),
                pattern: pattern(&el, &[("C3", 1.0), ("F3", 0.3), ("P3", 0.3), ("Cz", 0.3), ("T7", 0.3)]),
                carrier: Carrier::Band { lo: 15.0, hi: 30.0 },
                amplitude: 1.0,
            },
            SourceSpec {
                name: "ers".into(),
                pattern: pattern(&el, &[("C4", 1.0), ("F4", 0.3), ("P4", 0.3), ("Cz", 0.3), ("T8", 0.3)]),
                carrier: Carrier::Band { lo: 15.0, hi: 25.0 },
                amplitude: 1.0,
            },
        ];
        let scene = |id: &str, action_end: f64, burst: f64| DatasetScene {
            id: id.into(),
            envelopes: vec![
                Envelope::Events {
                    rate: 0.35,
                    quiet: (1.3, action_end + 0.5),
                    quiet_rate: 0.03,
                    burst: Some(Burst { center: burst, jitter: 0.3, prob: 0.9 }),
                    width: 0.15,
                },
                Envelope::Bump { center: 1.8, width: 0.12, base: 0.0 },
                Envelope::Dip { start: 1.5, end: action_end, depth: 0.8, ramp: 0.3 },
                Envelope::Bump { center: action_end + 1.0, width: 0.5, base: 0.2 },
            ],
            jitter: 0.1,
        };
        SynthConfig {
            electrodes: el.iter().map(|s| s.to_string()).collect(),
            fs: 160.0,
            trial_seconds: 9.5,
            subjects_per_dataset: 8,
            trials_per_subject: 40,
            sources,
            datasets: vec![scene("synA", 5.5, 7.0), scene("synB", 3.5, 5.0)],
            snr_db: Some(0.0),
            gain_spread: 0.2,
            seed,
        }
    }

    pub fn trial_len(&self) -> usize {
        (self.trial_seconds * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        let e = self.electrodes.len();
        if e == 0 || self.fs <= 0.0 || self.trial_seconds <= 0.0 || self.subjects_per_dataset == 0 || self.trials_per_subject == 0 {
            return Err("electrodes, fs, trial length, subjects and trials must be positive".into());
        }
        for s in &self.sources {
            if s.pattern.len() != e || s.pattern.iter().all(|&w| w == 0.0) {
                return Err(format!("source {} needs a nonzero pattern over {e} electrodes", s.name));
            }
            if let Carrier::Band { lo, hi } = s.carrier {
                if !(lo >= 0.0 && lo < hi && hi <= self.fs / 2.0) {
                    return Err(format!("source {}: band [{lo}, {hi}] invalid", s.name));
                }
            }
        }
        for d in &self.datasets {
            if d.envelopes.len() != self.sources.len() {
                return Err(format!("dataset {} has {} envelopes for {} sources", d.id, d.envelopes.len(), self.sources.len()));
            }
        }
        Ok(())
    }
}

/// Unit-variance pink (1/f power) noise.
pub fn pink_noise<R: Rng + ?Sized>(n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    let fft = RealFft::new(n);
    let spec: Vec<Complex64> = (0..fft.n_bins())
        .map(|k| {
            if k == 0 {
                return Complex64::new(0.0, 0.0);
            }
            let f = k as f64 * fs / n as f64;
            let g = 1.0 / f.sqrt();
            Complex64::new(
                g * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
                g * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
            )
        })
        .collect();
    unit_rms(fft.inverse(&spec))
}

/// Unit-RMS Gaussian noise with energy only in `[lo, hi]` Hz.
pub fn band_noise<R: Rng + ?Sized>(n: usize, fs: f64, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    let fft = RealFft::new(n);
    let spec: Vec<Complex64> = (0..fft.n_bins())
        .map(|k| {
            let f = k as f64 * fs / n as f64;
            if k > 0 && f >= lo && f <= hi && !(n.is_multiple_of(2) && k == n / 2) {
                Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    unit_rms(fft.inverse(&spec))
}

fn unit_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

fn pulse(t: f64, sigma: f64) -> f64 {
    let g = |u: f64, s: f64| (-u * u / (2.0 * s * s)).exp();
    g(t, sigma) - 0.25 * g(t - 3.0 * sigma, 2.0 * sigma)
}

/// Ground truth of one generated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTruth {
    pub dataset_id: String,
    pub recording: String,
    pub start: usize,
    /// Event times (seconds from trial start) per source; empty for
    /// deterministic envelopes.
    pub events: Vec<Vec<f64>>,
}

/// Envelopes `[trial × source × time]` per dataset plus event lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub sources: Vec<String>,
    pub fs: f64,
    pub trials: Vec<TrialTruth>,
    pub envelopes: Array3<f32>,
    index: HashMap<(String, usize), usize>,
}

impl Truth {
    fn new(sources: Vec<String>, fs: f64, trials: Vec<TrialTruth>, envelopes: Array3<f32>) -> Self {
        let index = trials.iter().enumerate().map(|(i, t)| ((t.recording.clone(), t.start), i)).collect();
        Truth { sources, fs, trials, envelopes, index }
    }

    /// Row of `trial` in the truth arrays.
    pub fn lookup(&self, trial: &Trial) -> Option<usize> {
        self.index.get(&(trial.recording.clone(), trial.start)).copied()
    }

    /// `[K × L]` envelopes of one trial as `f64`.
    pub fn trial_envelopes(&self, row: usize) -> Array2<f64> {
        self.envelopes.index_axis(ndarray::Axis(0), row).mapv(f64::from)
    }

    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        let (n, k, l) = self.envelopes.dim();
        let data: Vec<f32> = self.envelopes.iter().copied().collect();
        write_tensor(dir, "envelopes", &[n, k, l], &data)?;
        let meta = TruthMeta { sources: self.sources.clone(), fs: self.fs, trials: self.trials.clone() };
        fs::write(dir.join("truth.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let meta: TruthMeta = serde_json::from_slice(&fs::read(dir.join("truth.json"))?)?;
        let (shape, data) = read_tensor(dir, "envelopes", None)?;
        if shape.len() != 3 || shape[0] != meta.trials.len() || shape[1] != meta.sources.len() {
            return Err(StoreError::BadTensor { name: "envelopes".into(), msg: format!("shape {shape:?}") });
        }
        let env =
            Array3::from_shape_vec((shape[0], shape[1], shape[2]), data).map_err(|e| StoreError::BadTensor { name: "envelopes".into(), msg: e.to_string() })?;
        Ok(Truth::new(meta.sources, meta.fs, meta.trials, env))
    }
}

#[derive(Serialize, Deserialize)]
struct TruthMeta {
    sources: Vec<String>,
    fs: f64,
    trials: Vec<TrialTruth>,
}

/// A generated scene.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub store: Store,
    pub truth: Truth,
    pub recording_names: Vec<String>,
}

impl SynthOutput {
    /// Writes the store into `dir` and the truth into `dir/truth`.
    pub fn write(&self, dir: &Path) -> Result<(), StoreError> {
        write_store(dir, &self.store.tables, &self.recording_names, &self.store.recordings, self.store.manifest.notes.clone())?;
        self.truth.save(&dir.join("truth"))
    }
}

struct GeneratedTrial {
    sources: Array2<f64>,
    envelopes: Array2<f64>,
    events: Vec<Vec<f64>>,
}

fn generate_trial(cfg: &SynthConfig, scene: &DatasetScene, subject_gain: &[f64], trial_seed: u64) -> GeneratedTrial {
    let mut rng = crate::rng::seeded(trial_seed);
    let (e, l, fs) = (cfg.electrodes.len(), cfg.trial_len(), cfg.fs);
    let shift = if scene.jitter > 0.0 { rng.random_range(-scene.jitter..=scene.jitter) } else { 0.0 };
    let mut signal = Array2::<f64>::zeros((e, l));
    let mut envelopes = Array2::<f64>::zeros((cfg.sources.len(), l));
    let mut events = Vec::with_capacity(cfg.sources.len());
    for (k, (src, env)) in cfg.sources.iter().zip(&scene.envelopes).enumerate() {
        let ev = env.draw_events(cfg.trial_seconds, shift, &mut rng);
        let gain = subject_gain[k] * (1.0 + if cfg.gain_spread > 0.0 { rng.random_range(-cfg.gain_spread..=cfg.gain_spread) } else { 0.0 });
        let amp = src.amplitude * gain;
        let wave: Vec<f64> = match src.carrier {
            Carrier::Band { lo, hi } => {
                let carrier = band_noise(l, fs, lo, hi, &mut rng);
                (0..l).map(|i| env.value(i as f64 / fs, shift, &ev) * carrier[i]).collect()
            }
            Carrier::Locked { freq } => {
                let c = env.center(shift);
                (0..l)
                    .map(|i| {
                        let t = i as f64 / fs;
                        env.value(t, shift, &ev) * (std::f64::consts::TAU * freq * (t - c)).cos()
                    })
                    .collect()
            }
            Carrier::Pulse { sigma } => (0..l).map(|i| ev.iter().map(|&t0| pulse(i as f64 / fs - t0, sigma)).sum()).collect(),
        };
        let norm = src.pattern.iter().map(|w| w * w).sum::<f64>().sqrt();
        for (ch, w) in src.pattern.iter().enumerate() {
            if *w != 0.0 {
                let g = amp * w / norm;
                for (o, v) in signal.row_mut(ch).iter_mut().zip(&wave) {
                    *o += g * v;
                }
            }
        }
        for i in 0..l {
            envelopes[[k, i]] = env.value(i as f64 / fs, shift, &ev).clamp(0.0, 1.0);
        }
        events.push(ev);
    }
    GeneratedTrial { sources: signal, envelopes, events }
}

/// Generates the scene; bitwise reproducible from `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, String> {
    cfg.validate()?;
    let (e, l) = (cfg.electrodes.len(), cfg.trial_len());
    let n_per_ds = cfg.subjects_per_dataset * cfg.trials_per_subject;
    // (dataset, subject, trial) in a fixed order.
    let jobs: Vec<(usize, usize, usize)> =
        (0..cfg.datasets.len()).flat_map(|d| (0..cfg.subjects_per_dataset).flat_map(move |s| (0..cfg.trials_per_subject).map(move |t| (d, s, t)))).collect();
    let subject_gains: Vec<Vec<f64>> = (0..cfg.datasets.len() * cfg.subjects_per_dataset)
        .map(|i| {
            let mut r = derived(cfg.seed, "subject", i as u64);
            cfg.sources.iter().map(|_| if cfg.gain_spread > 0.0 { 1.0 + r.random_range(-cfg.gain_spread..=cfg.gain_spread) } else { 1.0 }).collect()
        })
        .collect();
    let trials: Vec<GeneratedTrial> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(d, s, _))| {
            generate_trial(cfg, &cfg.datasets[d], &subject_gains[d * cfg.subjects_per_dataset + s], crate::rng::derive_seed(cfg.seed, "trial", i as u64))
        })
        .collect();
    let noise_sd = match cfg.snr_db {
        Some(snr) => {
            let power: f64 = trials.iter().map(|t| t.sources.iter().map(|v| v * v).sum::<f64>() / l as f64).sum::<f64>() / trials.len() as f64;
            (power / (e as f64 * 10f64.powf(snr / 10.0))).sqrt()
        }
        None => 0.0,
    };

    let mut tables = Vec::new();
    let mut names = Vec::new();
    let mut recordings = Vec::new();
    let mut truth_trials = Vec::new();
    let mut env = Array3::<f32>::zeros((jobs.len(), cfg.sources.len(), l));
    for (d, scene) in cfg.datasets.iter().enumerate() {
        let mut table = TrialTable { dataset_id: scene.id.clone(), trial_seconds: cfg.trial_seconds, trials: Vec::new() };
        for s in 0..cfg.subjects_per_dataset {
            let subject = format!("{}-s{:02}", scene.id, s);
            let name = format!("{}_s{:02}", scene.id, s);
            let mut samples = Array2::<f32>::zeros((e, l * cfg.trials_per_subject));
            for t in 0..cfg.trials_per_subject {
                let gi = d * n_per_ds + s * cfg.trials_per_subject + t;
                let g = &trials[gi];
                let mut nrng = derived(cfg.seed, "noise", gi as u64);
                for ch in 0..e {
                    let noise = if noise_sd > 0.0 { pink_noise(l, cfg.fs, &mut nrng) } else { vec![0.0; l] };
                    for i in 0..l {
                        samples[[ch, t * l + i]] = (g.sources[[ch, i]] + noise_sd * noise[i]) as f32;
                    }
                }
                for k in 0..cfg.sources.len() {
                    for i in 0..l {
                        env[[gi, k, i]] = g.envelopes[[k, i]] as f32;
                    }
                }
                table.trials.push(Trial {
                    recording: name.clone(),
                    start: t * l,
                    length: l,
                    subject_id: subject.clone(),
                    valid: (0, l),
                    condition: Some("task".into()),
                });
                truth_trials.push(TrialTruth { dataset_id: scene.id.clone(), recording: name.clone(), start: t * l, events: g.events.clone() });
            }
            let mut rec = RecordingBuffer::new(samples, cfg.fs, cfg.electrodes.clone(), subject);
            rec.unitless = true;
            rec.reference = "synthetic".into();
            names.push(name);
            recordings.push(rec);
        }
        tables.push(table);
    }
    let notes = vec![format!("synthetic scene, seed {}, snr {:?} dB", cfg.seed, cfg.snr_db)];
    let store = assemble_store(tables, &names, recordings, notes).map_err(|e| e.to_string())?;
    let truth = Truth::new(cfg.sources.iter().map(|s| s.name.clone()).collect(), cfg.fs, truth_trials, env);
    Ok(SynthOutput { store, truth, recording_names: names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny(seed: u64) -> SynthConfig {
        SynthConfig { subjects_per_dataset: 2, trials_per_subject: 3, ..SynthConfig::motor_default(seed) }
    }

    #[test]
    fn deterministic_by_seed() {
        let a = generate(&tiny(4)).unwrap();
        let b = generate(&tiny(4)).unwrap();
        assert_eq!(a.store.recordings, b.store.recordings);
        assert_eq!(a.truth, b.truth);
        let c = generate(&tiny(5)).unwrap();
        assert_ne!(a.store.recordings[0].samples, c.store.recordings[0].samples);
    }

    #[test]
    fn envelopes_in_unit_interval_and_schedules_differ() {
        let out = generate(&tiny(1)).unwrap();
        assert!(out.truth.envelopes.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // ERD dip ends 2 s earlier in the second dataset.
        let fs = 160.0;
        let at = |row: usize, t: f64| out.truth.envelopes[[row, 2, (t * fs) as usize]];
        let first_b = out.truth.trials.iter().position(|t| t.dataset_id == "synB").unwrap();
        assert!(at(0, 4.5) < 0.3 && at(first_b, 4.5) > 0.9);
    }

    #[test]
    fn band_carrier_stays_in_band() {
        let x = band_noise(1520, 160.0, 15.0, 30.0, &mut seeded(2));
        let spec = RealFft::new(1520).forward(&x);
        let (mut inside, mut outside) = (0.0, 0.0);
        for (k, c) in spec.iter().enumerate() {
            let f = k as f64 * 160.0 / 1520.0;
            if (15.0..=30.0).contains(&f) {
                inside += c.norm_sqr();
            } else {
                outside += c.norm_sqr();
            }
        }
        assert!(10.0 * (outside.max(1e-300) / inside).log10() < -30.0);
    }

    #[test]
    fn single_source_rank_one() {
        let mut cfg = tiny(3);
        cfg.sources.truncate(3);
        cfg.sources.drain(..2);
        for d in &mut cfg.datasets {
            d.envelopes = vec![Envelope::Constant { level: 1.0 }];
        }
        cfg.snr_db = None;
        let out = generate(&cfg).unwrap();
        let x = out.store.recordings[0].samples.mapv(f64::from);
        let cov = x.dot(&x.t());
        // Leading eigenvector by power iteration.
        let mut v = ndarray::Array1::from_elem(cov.nrows(), 1.0);
        for _ in 0..200 {
            v = cov.dot(&v);
            let n = v.dot(&v).sqrt();
            v /= n;
        }
        let p = ndarray::Array1::from(cfg.sources[0].pattern.clone());
        let r = (v.dot(&p) / p.dot(&p).sqrt()).abs();
        assert!(r >= 0.99, "{r}");
    }

    #[test]
    fn noise_level_matches_snr() {
        let mut cfg = tiny(6);
        cfg.snr_db = Some(0.0);
        let noisy = generate(&cfg).unwrap();
        cfg.snr_db = None;
        let clean = generate(&cfg).unwrap();
        let (mut ps, mut pn) = (0.0, 0.0);
        for (a, b) in noisy.store.recordings.iter().zip(&clean.store.recordings) {
            for (x, y) in a.samples.iter().zip(&b.samples) {
                ps += (*y as f64).powi(2);
                pn += (*x as f64 - *y as f64).powi(2);
            }
        }
        assert!((10.0 * (ps / pn).log10()).abs() < 0.05);
    }

    #[test]
    fn write_and_reload() {
        let out = generate(&tiny(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write(dir.path()).unwrap();
        let store = crate::io::read_store(dir.path()).unwrap();
        assert_eq!(store.recordings, out.store.recordings);
        let truth = Truth::load(&dir.path().join("truth")).unwrap();
        assert_eq!(truth, out.truth);
        let t = &store.tables[1].trials[2];
        assert_eq!(truth.trials[truth.lookup(t).unwrap()].start, t.start);
    }
}

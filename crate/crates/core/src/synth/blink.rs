//! A two-layer convolutional reconstructor that tries to undo an 8–40 Hz
//! bandpass on a frontal channel, and its evaluation around blink events.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Truth;
use crate::dsp::{butter_bandpass, filtfilt, padlen, DspError};
use crate::io::{trial_samples, Store};
use crate::rng::{derived, Rng as SeededRng};
use crate::stats::{pearson, sample_std};
use crate::training::AdamW;

/// 1-D convolution with zero padding, `[out × in × k]` weights and a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pad: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    /// Uniform `±1/√(in·k)` initialization.
    pub fn init<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, pad: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let weight = (0..out_ch * in_ch * kernel).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..out_ch).map(|_| rng.random_range(-bound..bound)).collect();
        Conv1d { in_ch, out_ch, kernel, pad, weight, bias }
    }

    pub fn out_len(&self, t: usize) -> usize {
        t + 2 * self.pad + 1 - self.kernel
    }

    /// `x` is `[in × t]`; returns `[out × out_len(t)]`.
    pub fn forward(&self, x: &[f64], t: usize) -> Vec<f64> {
        let to = self.out_len(t);
        let mut y = vec![0.0; self.out_ch * to];
        for o in 0..self.out_ch {
            let yo = &mut y[o * to..(o + 1) * to];
            yo.fill(self.bias[o]);
            for i in 0..self.in_ch {
                let xi = &x[i * t..(i + 1) * t];
                for j in 0..self.kernel {
                    let w = self.weight[(o * self.in_ch + i) * self.kernel + j];
                    // Output index u reads input u + j − pad.
                    let lo = self.pad.saturating_sub(j);
                    let hi = (t + self.pad).saturating_sub(j).min(to);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xi[lo + j - self.pad..hi + j - self.pad];
                    for (a, b) in yo[lo..hi].iter_mut().zip(src) {
                        *a += w * b;
                    }
                }
            }
        }
        y
    }

    /// Accumulates weight and bias gradients; returns `∂L/∂x`.
    pub fn backward(&self, x: &[f64], t: usize, dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        let to = self.out_len(t);
        let mut dx = vec![0.0; self.in_ch * t];
        for o in 0..self.out_ch {
            let g = &dy[o * to..(o + 1) * to];
            db[o] += g.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let xi = &x[i * t..(i + 1) * t];
                let dxi = &mut dx[i * t..(i + 1) * t];
                for j in 0..self.kernel {
                    let idx = (o * self.in_ch + i) * self.kernel + j;
                    let lo = self.pad.saturating_sub(j);
                    let hi = (t + self.pad).saturating_sub(j).min(to);
                    if lo >= hi {
                        continue;
                    }
                    let off = lo + j - self.pad;
                    let n = hi - lo;
                    let gs = &g[lo..hi];
                    dw[idx] += gs.iter().zip(&xi[off..off + n]).map(|(a, b)| a * b).sum::<f64>();
                    let w = self.weight[idx];
                    for (d, gv) in dxi[off..off + n].iter_mut().zip(gs) {
                        *d += w * gv;
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlinkProbeConfig {
    pub channel: String,
    pub hidden: usize,
    pub kernel: usize,
    pub pad: usize,
    pub leaky_slope: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub crop_seconds: f64,
    pub input_band: Option<(f64, f64)>,
    pub target_band: Option<(f64, f64)>,
    pub order: usize,
    /// Evaluation half-window around each event, seconds.
    pub half_window: f64,
    pub seed: u64,
}

impl Default for BlinkProbeConfig {
    fn default() -> Self {
        BlinkProbeConfig {
            channel: "Fp1".into(),
            hidden: 8,
            kernel: 161,
            pad: 80,
            leaky_slope: 0.01,
            steps: 1000,
            batch_size: 32,
            learning_rate: 3e-4,
            weight_decay: 1e-3,
            crop_seconds: 1.0,
            input_band: Some((8.0, 40.0)),
            target_band: Some((0.5, 45.0)),
            order: 3,
            half_window: 0.5,
            seed: 0,
        }
    }
}

/// One channel of one trial, filtered two ways, with its blink times.
#[derive(Debug, Clone, PartialEq)]
pub struct BlinkTrial {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub events: Vec<f64>,
    pub subject_id: String,
}

fn band(x: &[f64], b: Option<(f64, f64)>, order: usize, fs: f64) -> Result<Vec<f64>, DspError> {
    match b {
        Some((lo, hi)) => filtfilt(&butter_bandpass(order, lo, hi, fs)?, x, padlen(order)),
        None => Ok(x.to_vec()),
    }
}

/// Trials of subjects passing `keep`, with events of the `blink` source.
pub fn blink_trials(store: &Store, truth: &Truth, cfg: &BlinkProbeConfig, keep: impl Fn(&str) -> bool) -> Result<Vec<BlinkTrial>, DspError> {
    let blink = truth.sources.iter().position(|s| s == "blink");
    let mut out = Vec::new();
    for table in &store.tables {
        for t in table.trials.iter().filter(|t| keep(&t.subject_id)) {
            let Some(rec) = store.recording(&t.recording) else { continue };
            let Some(ch) = rec.channel_index(&cfg.channel) else { continue };
            let raw = trial_samples(rec, t).row(ch).to_vec();
            let events = match (blink, truth.lookup(t)) {
                (Some(k), Some(row)) => truth.trials[row].events[k].clone(),
                _ => Vec::new(),
            };
            out.push(BlinkTrial {
                input: band(&raw, cfg.input_band, cfg.order, rec.fs)?,
                target: band(&raw, cfg.target_band, cfg.order, rec.fs)?,
                events,
                subject_id: t.subject_id.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlinkReconstructor {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub leaky_slope: f64,
    /// Input and target are divided by this before the network.
    pub scale: f64,
}

impl BlinkReconstructor {
    pub fn init(cfg: &BlinkProbeConfig, scale: f64) -> Self {
        let mut rng = derived(cfg.seed, "blink-init", 0);
        BlinkReconstructor {
            conv1: Conv1d::init(1, cfg.hidden, cfg.kernel, cfg.pad, &mut rng),
            conv2: Conv1d::init(cfg.hidden, 1, cfg.kernel, cfg.pad, &mut rng),
            leaky_slope: cfg.leaky_slope,
            scale,
        }
    }

    /// Reconstruction in input units.
    pub fn reconstruct(&self, input: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = input.iter().map(|v| v / self.scale).collect();
        let (_, _, y) = self.forward_scaled(&x);
        y.into_iter().map(|v| v * self.scale).collect()
    }

    fn forward_scaled(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let t = x.len();
        let pre = self.conv1.forward(x, t);
        let s = self.leaky_slope;
        let h: Vec<f64> = pre.iter().map(|&v| if v > 0.0 { v } else { s * v }).collect();
        let t1 = self.conv1.out_len(t);
        let y = self.conv2.forward(&h, t1);
        (pre, h, y)
    }
}

fn sample_crops(trials: &[BlinkTrial], n: usize, len: usize, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    (0..n)
        .map(|_| {
            let i = rng.random_range(0..trials.len());
            let start = rng.random_range(0..=trials[i].input.len() - len);
            (i, start)
        })
        .collect()
}

/// Trains with MSE on random crops of `trials`. Returns the model and the
/// per-step loss.
pub fn blink_probe_train(trials: &[BlinkTrial], cfg: &BlinkProbeConfig, fs: f64) -> (BlinkReconstructor, Vec<f64>) {
    let all_targets: Vec<f64> = trials.iter().flat_map(|t| t.target.iter().copied()).collect();
    let scale = sample_std(&all_targets).max(1e-12);
    let mut model = BlinkReconstructor::init(cfg, scale);
    let len = ((cfg.crop_seconds * fs).round() as usize).min(trials.iter().map(|t| t.input.len()).min().unwrap_or(0));
    let mut rng = derived(cfg.seed, "blink-crops", 0);
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let crops = sample_crops(trials, cfg.batch_size, len, &mut rng);
        let denom = (crops.len() * len) as f64;
        let per: Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = crops
            .par_iter()
            .map(|&(i, s)| {
                let x: Vec<f64> = trials[i].input[s..s + len].iter().map(|v| v / scale).collect();
                let target: Vec<f64> = trials[i].target[s..s + len].iter().map(|v| v / scale).collect();
                let (pre, h, y) = model.forward_scaled(&x);
                let loss: f64 = y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / denom;
                let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b) / denom).collect();
                let (mut dw1, mut db1) = (vec![0.0; model.conv1.weight.len()], vec![0.0; model.conv1.bias.len()]);
                let (mut dw2, mut db2) = (vec![0.0; model.conv2.weight.len()], vec![0.0; model.conv2.bias.len()]);
                let t1 = model.conv1.out_len(len);
                let mut dh = model.conv2.backward(&h, t1, &dy, &mut dw2, &mut db2);
                for (d, p) in dh.iter_mut().zip(&pre) {
                    if *p <= 0.0 {
                        *d *= model.leaky_slope;
                    }
                }
                model.conv1.backward(&x, len, &dh, &mut dw1, &mut db1);
                (loss, dw1, db1, dw2, db2)
            })
            .collect();
        let mut g =
            [vec![0.0; model.conv1.weight.len()], vec![0.0; model.conv1.bias.len()], vec![0.0; model.conv2.weight.len()], vec![0.0; model.conv2.bias.len()]];
        let mut loss = 0.0;
        for (l, a, b, c, d) in per {
            loss += l;
            for (acc, part) in g.iter_mut().zip([a, b, c, d]) {
                acc.iter_mut().zip(part).for_each(|(x, y)| *x += y);
            }
        }
        losses.push(loss);
        let grads: Vec<&[f64]> = g.iter().map(|v| v.as_slice()).collect();
        opt.step(&mut [&mut model.conv1.weight, &mut model.conv1.bias, &mut model.conv2.weight, &mut model.conv2.bias], &grads);
    }
    (model, losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlinkEval {
    pub r: f64,
    pub n_events: usize,
    pub n_samples: usize,
}

/// Pooled Pearson r between reconstruction and target over `±half_window`
/// around every event.
pub fn blink_probe_eval(model: &BlinkReconstructor, trials: &[BlinkTrial], half_window: f64, fs: f64) -> BlinkEval {
    let per: Vec<(Vec<f64>, Vec<f64>, usize)> = trials
        .par_iter()
        .filter(|t| !t.events.is_empty())
        .map(|t| {
            let rec = model.reconstruct(&t.input);
            let (mut a, mut b) = (Vec::new(), Vec::new());
            let mut n = 0;
            for &e in &t.events {
                let c = (e * fs).round() as isize;
                let h = (half_window * fs).round() as isize;
                let lo = (c - h).max(0) as usize;
                let hi = ((c + h) as usize).min(t.input.len());
                if lo < hi {
                    a.extend_from_slice(&rec[lo..hi]);
                    b.extend_from_slice(&t.target[lo..hi]);
                    n += 1;
                }
            }
            (a, b, n)
        })
        .collect();
    let (mut a, mut b, mut n) = (Vec::new(), Vec::new(), 0);
    for (x, y, k) in per {
        a.extend(x);
        b.extend(y);
        n += k;
    }
    BlinkEval { r: if a.len() > 2 { pearson(&a, &b) } else { 0.0 }, n_events: n, n_samples: a.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = seeded(1);
        let c = Conv1d::init(2, 3, 5, 2, &mut rng);
        let t = 9;
        let x: Vec<f64> = (0..2 * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = c.forward(&x, t);
        for o in 0..3 {
            for u in 0..t {
                let mut s = c.bias[o];
                for i in 0..2 {
                    for j in 0..5 {
                        let p = u as isize + j as isize - 2;
                        if (0..t as isize).contains(&p) {
                            s += c.weight[(o * 2 + i) * 5 + j] * x[i * t + p as usize];
                        }
                    }
                }
                assert!((y[o * t + u] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = seeded(2);
        let c = Conv1d::init(2, 3, 5, 2, &mut rng);
        let t = 8;
        let x: Vec<f64> = (0..2 * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wts: Vec<f64> = (0..3 * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |c: &Conv1d, x: &[f64]| c.forward(x, t).iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>();
        let (mut dw, mut db) = (vec![0.0; c.weight.len()], vec![0.0; 3]);
        let dx = c.backward(&x, t, &wts, &mut dw, &mut db);
        let h = 1e-6;
        for i in 0..c.weight.len() {
            let (mut p, mut m) = (c.clone(), c.clone());
            p.weight[i] += h;
            m.weight[i] -= h;
            assert!(((loss(&p, &x) - loss(&m, &x)) / (2.0 * h) - dw[i]).abs() < 1e-6);
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&c, &p) - loss(&c, &m)) / (2.0 * h) - dx[i]).abs() < 1e-6);
        }
        assert!((db[0] - wts[..t].iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn identity_is_learnable() {
        let mut rng = seeded(3);
        let trials: Vec<BlinkTrial> = (0..8)
            .map(|_| {
                let x: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
                BlinkTrial { input: x.clone(), target: x, events: vec![1.0, 2.0], subject_id: "s".into() }
            })
            .collect();
        let cfg =
            BlinkProbeConfig { kernel: 9, pad: 4, steps: 1500, batch_size: 8, learning_rate: 1e-2, weight_decay: 0.0, crop_seconds: 1.0, ..Default::default() };
        let (model, _) = blink_probe_train(&trials, &cfg, 100.0);
        let ev = blink_probe_eval(&model, &trials, 0.5, 100.0);
        assert!(ev.r >= 0.999, "{}", ev.r);
    }
}

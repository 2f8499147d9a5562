use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::filterbank::{FilterClamps, GaussianFilter};

/// Per-channel batch normalization: affine parameters and running stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(n: usize) -> Self {
        BatchNormParams { gamma: vec![1.0; n], beta: vec![0.0; n], running_mean: vec![0.0; n], running_var: vec![1.0; n] }
    }

    fn zeros(n: usize) -> Self {
        BatchNormParams { gamma: vec![0.0; n], beta: vec![0.0; n], running_mean: vec![0.0; n], running_var: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// All tensors of the decomposer. The same type doubles as the gradient
/// container (running statistics are then unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `[C × 3]`: centre and bandwidth as fractions of Nyquist, then shape.
    pub filter: Vec<f64>,
    /// `[C·D × E]`.
    pub spatial: Vec<f64>,
    pub bn1: BatchNormParams,
    /// `[C·D × k1]`.
    pub depth1: Vec<f64>,
    /// `[C·D·F1 × D]`, grouped by component.
    pub point1: Vec<f64>,
    pub bn2: BatchNormParams,
    /// `[C·D·F1 × k2]`.
    pub depth2: Vec<f64>,
    /// `[C·D·F1·F2 × D·F1]`, grouped by component.
    pub point2: Vec<f64>,
    pub bn3: BatchNormParams,
    /// `[C × D·F1·F2]`.
    pub reduce_w: Vec<f64>,
    /// `[C]`.
    pub reduce_b: Vec<f64>,
}

fn uniform<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (c, d, e) = (cfg.n_components, cfg.spatial_filters, cfg.n_electrodes);
        ModelParams {
            filter: vec![0.0; 3 * c],
            spatial: vec![0.0; c * d * e],
            bn1: BatchNormParams::zeros(cfg.k1()),
            depth1: vec![0.0; cfg.k1() * cfg.kernel1],
            point1: vec![0.0; cfg.k2() * d],
            bn2: BatchNormParams::zeros(cfg.k2()),
            depth2: vec![0.0; cfg.k2() * cfg.kernel2],
            point2: vec![0.0; cfg.k3() * d * cfg.f1],
            bn3: BatchNormParams::zeros(cfg.k3()),
            reduce_w: vec![0.0; c * d * cfg.f1 * cfg.f2],
            reduce_b: vec![0.0; c],
        }
    }

    /// Uniform `±1/√fan_in` weights, identity batch norms, filters at
    /// `cfg.filter_init`.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let (c, d) = (cfg.n_components, cfg.spatial_filters);
        let nyq = cfg.fs / 2.0;
        let (mu, h, beta) = cfg.filter_init;
        let filter = (0..c).flat_map(|_| [mu / nyq, h / nyq, beta]).collect();
        let k_red = d * cfg.f1 * cfg.f2;
        ModelParams {
            filter,
            spatial: uniform(c * d * cfg.n_electrodes, 1.0 / (cfg.n_electrodes as f64).sqrt(), rng),
            bn1: BatchNormParams::new(cfg.k1()),
            depth1: uniform(cfg.k1() * cfg.kernel1, 1.0 / (cfg.kernel1 as f64).sqrt(), rng),
            point1: uniform(cfg.k2() * d, 1.0 / (d as f64).sqrt(), rng),
            bn2: BatchNormParams::new(cfg.k2()),
            depth2: uniform(cfg.k2() * cfg.kernel2, 1.0 / (cfg.kernel2 as f64).sqrt(), rng),
            point2: uniform(cfg.k3() * d * cfg.f1, 1.0 / ((d * cfg.f1) as f64).sqrt(), rng),
            bn3: BatchNormParams::new(cfg.k3()),
            reduce_w: uniform(c * k_red, 1.0 / (k_red as f64).sqrt(), rng),
            reduce_b: uniform(c, 1.0 / (k_red as f64).sqrt(), rng),
        }
    }

    /// Clamps in the normalized units of `filter`.
    pub fn filter_clamps(cfg: &ModelConfig) -> FilterClamps {
        let nyq = cfg.fs / 2.0;
        let hz = FilterClamps::for_rate(cfg.fs);
        FilterClamps { mu: (hz.mu.0 / nyq, hz.mu.1 / nyq), h: (hz.h.0 / nyq, hz.h.1 / nyq), beta: hz.beta }
    }

    /// Raw (unclamped) filter of component `c`, normalized units.
    pub fn raw_filter(&self, c: usize) -> GaussianFilter {
        GaussianFilter::new(self.filter[3 * c], self.filter[3 * c + 1], self.filter[3 * c + 2])
    }

    /// Effective filters in Hz after clamping.
    pub fn filters_hz(&self, cfg: &ModelConfig) -> Vec<GaussianFilter> {
        let clamps = Self::filter_clamps(cfg);
        let nyq = cfg.fs / 2.0;
        (0..cfg.n_components)
            .map(|c| {
                let (f, _) = clamps.apply(&self.raw_filter(c));
                GaussianFilter::new(f.mu * nyq, f.h * nyq, f.beta)
            })
            .collect()
    }

    /// Projects filter parameters back into their clamps.
    pub fn project(&mut self, cfg: &ModelConfig) {
        let clamps = Self::filter_clamps(cfg);
        for c in 0..cfg.n_components {
            let (f, _) = clamps.apply(&self.raw_filter(c));
            self.filter[3 * c..3 * c + 3].copy_from_slice(&[f.mu, f.h, f.beta]);
        }
    }

    /// Trainable tensors by name. Running statistics are excluded.
    pub fn trainable(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("filter", &self.filter),
            ("spatial", &self.spatial),
            ("bn1.gamma", &self.bn1.gamma),
            ("bn1.beta", &self.bn1.beta),
            ("depth1", &self.depth1),
            ("point1", &self.point1),
            ("bn2.gamma", &self.bn2.gamma),
            ("bn2.beta", &self.bn2.beta),
            ("depth2", &self.depth2),
            ("point2", &self.point2),
            ("bn3.gamma", &self.bn3.gamma),
            ("bn3.beta", &self.bn3.beta),
            ("reduce_w", &self.reduce_w),
            ("reduce_b", &self.reduce_b),
        ]
    }

    pub fn trainable_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("filter", &mut self.filter),
            ("spatial", &mut self.spatial),
            ("bn1.gamma", &mut self.bn1.gamma),
            ("bn1.beta", &mut self.bn1.beta),
            ("depth1", &mut self.depth1),
            ("point1", &mut self.point1),
            ("bn2.gamma", &mut self.bn2.gamma),
            ("bn2.beta", &mut self.bn2.beta),
            ("depth2", &mut self.depth2),
            ("point2", &mut self.point2),
            ("bn3.gamma", &mut self.bn3.gamma),
            ("bn3.beta", &mut self.bn3.beta),
            ("reduce_w", &mut self.reduce_w),
            ("reduce_b", &mut self.reduce_b),
        ]
    }

    /// Every tensor including running statistics, for serialization.
    pub fn all_tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut v = self.trainable();
        v.extend([
            ("bn1.running_mean", self.bn1.running_mean.as_slice()),
            ("bn1.running_var", self.bn1.running_var.as_slice()),
            ("bn2.running_mean", self.bn2.running_mean.as_slice()),
            ("bn2.running_var", self.bn2.running_var.as_slice()),
            ("bn3.running_mean", self.bn3.running_mean.as_slice()),
            ("bn3.running_var", self.bn3.running_var.as_slice()),
        ]);
        v
    }

    pub fn all_tensors_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        let ModelParams { filter, spatial, bn1, depth1, point1, bn2, depth2, point2, bn3, reduce_w, reduce_b } = self;
        vec![
            ("filter", filter),
            ("spatial", spatial),
            ("bn1.gamma", &mut bn1.gamma),
            ("bn1.beta", &mut bn1.beta),
            ("depth1", depth1),
            ("point1", point1),
            ("bn2.gamma", &mut bn2.gamma),
            ("bn2.beta", &mut bn2.beta),
            ("depth2", depth2),
            ("point2", point2),
            ("bn3.gamma", &mut bn3.gamma),
            ("bn3.beta", &mut bn3.beta),
            ("reduce_w", reduce_w),
            ("reduce_b", reduce_b),
            ("bn1.running_mean", &mut bn1.running_mean),
            ("bn1.running_var", &mut bn1.running_var),
            ("bn2.running_mean", &mut bn2.running_mean),
            ("bn2.running_var", &mut bn2.running_var),
            ("bn3.running_mean", &mut bn3.running_mean),
            ("bn3.running_var", &mut bn3.running_var),
        ]
    }

    pub fn n_trainable(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Ranges of every tensor (by name) owned by component `c`, including
    /// running statistics.
    pub fn group_ranges(cfg: &ModelConfig, c: usize) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let (d, e) = (cfg.spatial_filters, cfg.n_electrodes);
        let r = |per: usize| c * per..(c + 1) * per;
        let ch1 = r(d);
        let ch2 = r(d * cfg.f1);
        let ch3 = r(d * cfg.f1 * cfg.f2);
        let scale = |rg: &std::ops::Range<usize>, k: usize| rg.start * k..rg.end * k;
        let mut out = vec![
            ("filter", r(3)),
            ("spatial", scale(&ch1, e)),
            ("depth1", scale(&ch1, cfg.kernel1)),
            ("point1", scale(&ch2, d)),
            ("depth2", scale(&ch2, cfg.kernel2)),
            ("point2", scale(&ch3, d * cfg.f1)),
            ("reduce_w", r(d * cfg.f1 * cfg.f2)),
            ("reduce_b", r(1)),
        ];
        for (bn, ch) in [("bn1", &ch1), ("bn2", &ch2), ("bn3", &ch3)] {
            for field in ["gamma", "beta", "running_mean", "running_var"] {
                let name: &'static str = match (bn, field) {
                    ("bn1", "gamma") => "bn1.gamma",
                    ("bn1", "beta") => "bn1.beta",
                    ("bn1", "running_mean") => "bn1.running_mean",
                    ("bn1", "running_var") => "bn1.running_var",
                    ("bn2", "gamma") => "bn2.gamma",
                    ("bn2", "beta") => "bn2.beta",
                    ("bn2", "running_mean") => "bn2.running_mean",
                    ("bn2", "running_var") => "bn2.running_var",
                    ("bn3", "gamma") => "bn3.gamma",
                    ("bn3", "beta") => "bn3.beta",
                    ("bn3", "running_mean") => "bn3.running_mean",
                    _ => "bn3.running_var",
                };
                out.push((name, ch.clone()));
            }
        }
        out
    }

    /// Applies `f` to every scalar owned by component group `c`.
    pub fn for_each_in_group(&mut self, cfg: &ModelConfig, c: usize, mut f: impl FnMut(&'static str, &mut f64)) {
        let ranges = Self::group_ranges(cfg, c);
        for (name, tensor) in self.all_tensors_mut() {
            for (n, range) in &ranges {
                if *n == name {
                    for v in &mut tensor[range.clone()] {
                        f(name, v);
                    }
                }
            }
        }
    }

    /// `self += scale · other` over trainable tensors.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for ((_, a), (_, b)) in self.trainable_mut().into_iter().zip(other.trainable()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.all_tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over every tensor name and its little-endian `f64` bytes.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in self.all_tensors() {
            h.update(name.as_bytes());
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

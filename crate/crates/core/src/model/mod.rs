//! The grouped decomposer.
//!
//! Every latent component is its own sub-network: one spectral filter, `D`
//! spatial filters, two depthwise-separable temporal blocks and a pointwise
//! reduction to a single sigmoid output. Cross-channel weights exist only
//! inside a component group, so no information flows between components.
//!
//! Layer shapes for an `[E × T]` input:
//!
//! | layer                   | output            |
//! |-------------------------|-------------------|
//! | spectral filter         | `(C, E, T)`       |
//! | spatial (per group)     | `(C·D, T)`        |
//! | BN, leaky ReLU          |                   |
//! | separable conv `k1`     | `(C·D·F1, T)`     |
//! | BN, leaky ReLU, pool    | `(C·D·F1, T/p)`   |
//! | dropout                 |                   |
//! | separable conv `k2`     | `(C·D·F1·F2, T/p)`|
//! | BN, leaky ReLU, GAP     | `(C·D·F1·F2,)`    |
//! | dropout, reduction      | `(C,)`            |
//! | sigmoid                 | `(C,)`            |

mod network;
mod params;

pub use network::{forward_latent, BatchForward, Mode, Network};
pub use params::{BatchNormParams, ModelParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent components `C`.
    pub n_components: usize,
    /// Spatial filters per component `D`.
    pub spatial_filters: usize,
    /// Pointwise multiplier of the first separable block `F1`.
    pub f1: usize,
    /// Pointwise multiplier of the second separable block `F2`.
    pub f2: usize,
    pub kernel1: usize,
    pub pool1: usize,
    pub kernel2: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub n_electrodes: usize,
    /// Window length in samples.
    pub n_times: usize,
    pub fs: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    /// Initial filter `(μ, h, β)` in Hz.
    #[serde(default = "default_filter_init")]
    pub filter_init: (f64, f64, f64),
}

fn default_bn_momentum() -> f64 {
    0.1
}
fn default_bn_eps() -> f64 {
    1e-5
}
fn default_filter_init() -> (f64, f64, f64) {
    (24.0, 48.0, 2.0)
}

impl ModelConfig {
    /// Motor setup at 160 Hz with 1.5 s windows.
    pub fn motor(n_electrodes: usize, n_components: usize) -> Self {
        ModelConfig {
            n_components,
            spatial_filters: 2,
            f1: 2,
            f2: 2,
            kernel1: 81,
            pool1: 4,
            kernel2: 21,
            dropout: 0.25,
            leaky_slope: 0.01,
            n_electrodes,
            n_times: 240,
            fs: 160.0,
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
            filter_init: default_filter_init(),
        }
    }

    /// Sleep setup: kernels 101, pooling 16.
    pub fn sleep(n_electrodes: usize, n_components: usize, n_times: usize, fs: f64) -> Self {
        ModelConfig { kernel1: 101, pool1: 16, kernel2: 101, n_times, fs, ..Self::motor(n_electrodes, n_components) }
    }

    pub fn pad1(&self) -> usize {
        (self.kernel1 - 1) / 2
    }

    pub fn pad2(&self) -> usize {
        (self.kernel2 - 1) / 2
    }

    /// Channels after the spatial stage, `C·D`.
    pub fn k1(&self) -> usize {
        self.n_components * self.spatial_filters
    }

    /// Channels after the first separable block, `C·D·F1`.
    pub fn k2(&self) -> usize {
        self.k1() * self.f1
    }

    /// Channels after the second separable block, `C·D·F1·F2`.
    pub fn k3(&self) -> usize {
        self.k2() * self.f2
    }

    /// Pooled length `T // pool1` (trailing remainder dropped).
    pub fn t2(&self) -> usize {
        self.n_times / self.pool1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.n_components == 0 || self.spatial_filters == 0 || self.f1 == 0 || self.f2 == 0 {
            return bad("component and filter counts must be positive".into());
        }
        if self.kernel1.is_multiple_of(2) || self.kernel2.is_multiple_of(2) {
            return bad(format!("kernel sizes must be odd, got {} and {}", self.kernel1, self.kernel2));
        }
        if self.pool1 == 0 || self.t2() == 0 {
            return bad(format!("window of {} samples too short for pooling {}", self.n_times, self.pool1));
        }
        if self.n_times < 2 || self.n_electrodes == 0 {
            return bad("empty input".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        if !(self.fs > 0.0) {
            return bad(format!("fs {}", self.fs));
        }
        Ok(())
    }

    /// Output shape of every layer, input first.
    pub fn layer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (c, e, t, t2) = (self.n_components, self.n_electrodes, self.n_times, self.t2());
        vec![
            ("input", vec![e, t]),
            ("spectral_filter", vec![c, e, t]),
            ("spatial", vec![self.k1(), t]),
            ("separable1", vec![self.k2(), t]),
            ("pool1", vec![self.k2(), t2]),
            ("separable2", vec![self.k3(), t2]),
            ("global_pool", vec![self.k3()]),
            ("reduction", vec![c]),
        ]
    }
}

/// Latent activations `z ∈ (0, 1)^C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mean absolute spatial weight per component and electrode, `[C × E]`.
pub fn spatial_relevance(cfg: &ModelConfig, params: &ModelParams) -> ndarray::Array2<f64> {
    let (c, d, e) = (cfg.n_components, cfg.spatial_filters, cfg.n_electrodes);
    ndarray::Array2::from_shape_fn((c, e), |(ci, ei)| (0..d).map(|di| params.spatial[(ci * d + di) * e + ei].abs()).sum::<f64>() / d as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes_motor() {
        let mut cfg = ModelConfig::motor(28, 16);
        cfg.n_times = 240;
        let shapes: Vec<Vec<usize>> = cfg.layer_shapes().into_iter().map(|(_, s)| s).collect();
        assert_eq!(shapes, vec![vec![28, 240], vec![16, 28, 240], vec![32, 240], vec![64, 240], vec![64, 60], vec![128, 60], vec![128], vec![16]]);
    }

    #[test]
    fn floor_pooling() {
        let mut cfg = ModelConfig::motor(4, 2);
        cfg.n_times = 243;
        assert_eq!(cfg.t2(), 60);
        cfg.kernel1 = 80;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relevance_examples() {
        let mut cfg = ModelConfig::motor(3, 1);
        cfg.spatial_filters = 2;
        let mut p = ModelParams::zeros(&cfg);
        p.spatial = vec![1.0, -1.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(spatial_relevance(&cfg, &p).row(0).to_vec(), vec![1.0, 1.0, 0.0]);

        cfg.spatial_filters = 1;
        let mut p = ModelParams::zeros(&cfg);
        p.spatial = vec![-0.5, 2.0, 0.0];
        assert_eq!(spatial_relevance(&cfg, &p).row(0).to_vec(), vec![0.5, 2.0, 0.0]);

        cfg.spatial_filters = 3;
        let mut p = ModelParams::zeros(&cfg);
        p.spatial = vec![0.7, -0.7, 0.7, -0.7, 0.7, 0.7, 0.7, 0.7, -0.7];
        for v in spatial_relevance(&cfg, &p).iter() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }
}

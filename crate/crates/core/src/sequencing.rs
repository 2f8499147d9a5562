//! Per-dataset sequence mappings from latent components to time-bin
//! predictions.
//!
//! Raw mapping weights pass through the inverted mixed Gaussian unit
//! `MGU(x) = γ(1 − e^{−|x|}) + (1 − γ)(1 − e^{−x²})`, which maps to `[0, 1)`,
//! and each row is then divided by its sum whenever that sum exceeds one.
//! With `z ∈ (0, 1)^C` every prediction is a sub-convex combination of
//! components and stays in `[0, 1)`.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub fn mgu(x: f64, gamma: f64) -> f64 {
    gamma * (1.0 - (-x.abs()).exp()) + (1.0 - gamma) * (1.0 - (-x * x).exp())
}

/// Derivative of [`mgu`]; the `|x|` kink uses `sign(0) = 0`.
pub fn mgu_grad(x: f64, gamma: f64) -> f64 {
    let sign = if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    };
    gamma * sign * (-x.abs()).exp() + (1.0 - gamma) * 2.0 * x * (-x * x).exp()
}

/// `m* = m̂ / (max(Σm̂ − 1, 0) + 1)` with `m̂ = MGU(m)`.
pub fn seminormalize_row(m: &[f64], gamma: f64) -> Vec<f64> {
    let hat: Vec<f64> = m.iter().map(|&v| mgu(v, gamma)).collect();
    let denom = (hat.iter().sum::<f64>() - 1.0).max(0.0) + 1.0;
    hat.into_iter().map(|v| v / denom).collect()
}

/// Backward of [`seminormalize_row`]: `∂L/∂m` from `∂L/∂m*`.
pub fn seminormalize_row_grad(m: &[f64], gamma: f64, upstream: &[f64]) -> Vec<f64> {
    let hat: Vec<f64> = m.iter().map(|&v| mgu(v, gamma)).collect();
    let sum: f64 = hat.iter().sum();
    let dhat: Vec<f64> = if sum > 1.0 {
        let dot: f64 = upstream.iter().zip(&hat).map(|(g, h)| g * h).sum();
        upstream.iter().map(|g| g / sum - dot / (sum * sum)).collect()
    } else {
        upstream.to_vec()
    };
    m.iter().zip(dhat).map(|(&v, d)| d * mgu_grad(v, gamma)).collect()
}

const P_CLIP: f64 = 1e-7;

/// Smoothed target `y(1 − ε) + ε/2` for bin `target` of `y_len`.
pub fn smoothed_target(target: usize, y_len: usize, smoothing: f64) -> Vec<f64> {
    (0..y_len).map(|j| if j == target { 1.0 } else { 0.0 } * (1.0 - smoothing) + smoothing / 2.0).collect()
}

/// Mean binary cross-entropy over the `Y` outputs against a smoothed
/// one-hot target. Probabilities are clipped to `[1e-7, 1 − 1e-7]`.
pub fn bin_loss(p: &[f64], target: usize, smoothing: f64) -> f64 {
    let y = smoothed_target(target, p.len(), smoothing);
    p.iter()
        .zip(&y)
        .map(|(&pj, &yj)| {
            let q = pj.clamp(P_CLIP, 1.0 - P_CLIP);
            -(yj * q.ln() + (1.0 - yj) * (1.0 - q).ln())
        })
        .sum::<f64>()
        / p.len() as f64
}

/// `∂ bin_loss / ∂p`; zero where the clip is active.
pub fn bin_loss_grad(p: &[f64], target: usize, smoothing: f64) -> Vec<f64> {
    let y = smoothed_target(target, p.len(), smoothing);
    let n = p.len() as f64;
    p.iter()
        .zip(&y)
        .map(|(&pj, &yj)| {
            if !(P_CLIP..=1.0 - P_CLIP).contains(&pj) {
                return 0.0;
            }
            (-(yj / pj) + (1.0 - yj) / (1.0 - pj)) / n
        })
        .collect()
}

/// Raw mapping matrices `[Y × C]`, one per dataset, plus the MGU factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMappingSet {
    pub gamma: f64,
    pub n_bins: usize,
    pub n_components: usize,
    /// Row-major `[Y × C]` per dataset id.
    pub raw: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no sequence mapping for dataset {0:?}")]
pub struct UnknownDataset(pub String);

impl SequenceMappingSet {
    /// Zero-mean normal initialization with σ = 0.1.
    pub fn init<R: Rng + ?Sized, S: AsRef<str>>(dataset_ids: &[S], n_bins: usize, n_components: usize, gamma: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let raw = dataset_ids.iter().map(|id| (id.as_ref().to_string(), (0..n_bins * n_components).map(|_| normal.sample(rng)).collect())).collect();
        SequenceMappingSet { gamma, n_bins, n_components, raw }
    }

    pub fn zeros_like(&self) -> Self {
        SequenceMappingSet { raw: self.raw.iter().map(|(k, v)| (k.clone(), vec![0.0; v.len()])).collect(), ..self.clone() }
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.raw.keys().cloned().collect()
    }

    /// Semi-normalized `M*` for one dataset.
    pub fn normalized(&self, dataset_id: &str) -> Result<Array2<f64>, UnknownDataset> {
        let raw = self.raw.get(dataset_id).ok_or_else(|| UnknownDataset(dataset_id.into()))?;
        let c = self.n_components;
        let mut out = Array2::zeros((self.n_bins, c));
        for (j, row) in raw.chunks(c).enumerate() {
            for (k, v) in seminormalize_row(row, self.gamma).into_iter().enumerate() {
                out[[j, k]] = v;
            }
        }
        Ok(out)
    }

    /// `p = M*_i z`.
    pub fn forward_bins(&self, z: &[f64], dataset_id: &str) -> Result<Vec<f64>, UnknownDataset> {
        let m = self.normalized(dataset_id)?;
        let p: Vec<f64> = m.outer_iter().map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum()).collect();
        debug_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)), "bin prediction outside [0,1]");
        Ok(p)
    }

    /// Backward of [`forward_bins`](Self::forward_bins): adds `∂L/∂raw` into
    /// `grad` and returns `∂L/∂z`.
    pub fn backward_bins(&self, z: &[f64], dataset_id: &str, dp: &[f64], grad: &mut SequenceMappingSet) -> Result<Vec<f64>, UnknownDataset> {
        let raw = self.raw.get(dataset_id).ok_or_else(|| UnknownDataset(dataset_id.into()))?;
        let g = grad.raw.get_mut(dataset_id).ok_or_else(|| UnknownDataset(dataset_id.into()))?;
        let c = self.n_components;
        let mut dz = vec![0.0; c];
        for (j, row) in raw.chunks(c).enumerate() {
            let mstar = seminormalize_row(row, self.gamma);
            for k in 0..c {
                dz[k] += dp[j] * mstar[k];
            }
            let dmstar: Vec<f64> = z.iter().map(|zk| dp[j] * zk).collect();
            let drow = seminormalize_row_grad(row, self.gamma, &dmstar);
            for k in 0..c {
                g[j * c + k] += drow[k];
            }
        }
        Ok(dz)
    }
}

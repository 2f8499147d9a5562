//! Batched forward and backward passes with hand-derived gradients.
//!
//! Activations are stored `[B][channel][time]` row-major. Per-sample stages
//! run in parallel; every reduction over the batch runs in sample order so
//! results do not depend on thread scheduling.

use num_complex::Complex64;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use super::{LatentVector, ModelConfig, ModelError, ModelParams};
use crate::filterbank::SpectralFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, no dropout; a pure function of input and params.
    Eval,
}

/// The decomposer for one configuration; owns the FFT plans.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: ModelConfig,
    sf: SpectralFilter,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    /// Output of the affine step, input to the leaky ReLU.
    y: Vec<f64>,
    invstd: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub batch: usize,
    pub mode: Mode,
    /// `[B × C]` sigmoid outputs.
    pub z: Vec<f64>,
    spectra: Vec<Vec<Complex64>>,
    responses: Vec<Vec<f64>>,
    xf: Vec<f64>,
    bn1: BnCache,
    a1: Vec<f64>,
    d1: Vec<f64>,
    bn2: BnCache,
    mask1: Vec<f64>,
    qd: Vec<f64>,
    d2: Vec<f64>,
    bn3: BnCache,
    mask2: Vec<f64>,
    gd: Vec<f64>,
}

impl BatchForward {
    pub fn latent(&self, b: usize) -> LatentVector {
        let c = self.z.len() / self.batch;
        LatentVector(self.z[b * c..(b + 1) * c].to_vec())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Same-padded per-channel convolution: `out[t] = Σ_j w[j]·x[t + j − pad]`.
fn depthwise_fwd(x: &[f64], w: &[f64], channels: usize, t: usize, k: usize, pad: usize, out: &mut [f64]) {
    for c in 0..channels {
        let xi = &x[c * t..(c + 1) * t];
        let o = &mut out[c * t..(c + 1) * t];
        o.fill(0.0);
        for j in 0..k {
            let wj = w[c * k + j];
            let lo = pad.saturating_sub(j);
            let hi = (t + pad).saturating_sub(j).min(t);
            for ti in lo..hi {
                o[ti] += wj * xi[ti + j - pad];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn depthwise_bwd(x: &[f64], w: &[f64], dout: &[f64], channels: usize, t: usize, k: usize, pad: usize, dx: &mut [f64], dw: &mut [f64]) {
    for c in 0..channels {
        let xi = &x[c * t..(c + 1) * t];
        let g = &dout[c * t..(c + 1) * t];
        let dxi = &mut dx[c * t..(c + 1) * t];
        dxi.fill(0.0);
        for j in 0..k {
            let wj = w[c * k + j];
            let lo = pad.saturating_sub(j);
            let hi = (t + pad).saturating_sub(j).min(t);
            let mut acc = 0.0;
            for ti in lo..hi {
                acc += g[ti] * xi[ti + j - pad];
                dxi[ti + j - pad] += wj * g[ti];
            }
            dw[c * k + j] += acc;
        }
    }
}

/// Grouped 1×1 convolution: output channel `o` of group `g` mixes the
/// `in_per` input channels of `g`.
fn pointwise_fwd(x: &[f64], w: &[f64], groups: usize, in_per: usize, out_per: usize, t: usize, out: &mut [f64]) {
    for g in 0..groups {
        for oi in 0..out_per {
            let o = g * out_per + oi;
            let dst = &mut out[o * t..(o + 1) * t];
            dst.fill(0.0);
            for i in 0..in_per {
                let wv = w[o * in_per + i];
                let src = &x[(g * in_per + i) * t..(g * in_per + i + 1) * t];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pointwise_bwd(x: &[f64], w: &[f64], dout: &[f64], groups: usize, in_per: usize, out_per: usize, t: usize, dx: &mut [f64], dw: &mut [f64]) {
    dx.fill(0.0);
    for g in 0..groups {
        for oi in 0..out_per {
            let o = g * out_per + oi;
            let go = &dout[o * t..(o + 1) * t];
            for i in 0..in_per {
                let ic = g * in_per + i;
                let src = &x[ic * t..(ic + 1) * t];
                dw[o * in_per + i] += go.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                let wv = w[o * in_per + i];
                for (d, gv) in dx[ic * t..(ic + 1) * t].iter_mut().zip(go) {
                    *d += wv * gv;
                }
            }
        }
    }
}

fn bn_forward(x: &[f64], batch: usize, ch: usize, t: usize, bn: &super::BatchNormParams, mode: Mode, eps: f64) -> BnCache {
    let n = (batch * t) as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    match mode {
        Mode::Train => {
            for c in 0..ch {
                let mut s = 0.0;
                for b in 0..batch {
                    s += x[(b * ch + c) * t..(b * ch + c + 1) * t].iter().sum::<f64>();
                }
                let m = s / n;
                let mut v = 0.0;
                for b in 0..batch {
                    v += x[(b * ch + c) * t..(b * ch + c + 1) * t].iter().map(|u| (u - m) * (u - m)).sum::<f64>();
                }
                mean[c] = m;
                var[c] = v / n;
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(&bn.running_mean);
            var.copy_from_slice(&bn.running_var);
        }
    }
    let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..ch {
            let r = (b * ch + c) * t..(b * ch + c + 1) * t;
            for i in r {
                xhat[i] = (x[i] - mean[c]) * invstd[c];
                y[i] = bn.gamma[c] * xhat[i] + bn.beta[c];
            }
        }
    }
    BnCache { xhat, y, invstd, mean, var }
}

#[allow(clippy::too_many_arguments)]
fn bn_backward(dy: &[f64], cache: &BnCache, batch: usize, ch: usize, t: usize, gamma: &[f64], mode: Mode, dgamma: &mut [f64], dbeta: &mut [f64]) -> Vec<f64> {
    let n = (batch * t) as f64;
    let mut dx = vec![0.0; dy.len()];
    for c in 0..ch {
        let (mut sg, mut sb) = (0.0, 0.0);
        for b in 0..batch {
            let r = (b * ch + c) * t..(b * ch + c + 1) * t;
            for i in r {
                sg += dy[i] * cache.xhat[i];
                sb += dy[i];
            }
        }
        dgamma[c] += sg;
        dbeta[c] += sb;
        let k = gamma[c] * cache.invstd[c];
        for b in 0..batch {
            let r = (b * ch + c) * t..(b * ch + c + 1) * t;
            for i in r {
                dx[i] = match mode {
                    Mode::Train => k * (dy[i] - sb / n - cache.xhat[i] * sg / n),
                    Mode::Eval => k * dy[i],
                };
            }
        }
    }
    dx
}

impl Network {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let sf = SpectralFilter::new(cfg.n_times, cfg.fs);
        Ok(Network { cfg, sf })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn spectral(&self) -> &SpectralFilter {
        &self.sf
    }

    /// Forward pass over a batch of `[E × T]` windows (row-major slices).
    /// `rng` draws dropout masks in train mode.
    pub fn forward(&self, params: &ModelParams, inputs: &[&[f64]], mode: Mode, rng: &mut dyn RngCore) -> Result<BatchForward, ModelError> {
        let cfg = &self.cfg;
        let (c_n, d_n, e_n, t) = (cfg.n_components, cfg.spatial_filters, cfg.n_electrodes, cfg.n_times);
        let (k1, k2, k3, t2) = (cfg.k1(), cfg.k2(), cfg.k3(), cfg.t2());
        let batch = inputs.len();
        for x in inputs {
            if x.len() != e_n * t {
                return Err(ModelError::ShapeMismatch { expected: format!("[{e_n} × {t}]"), got: format!("{} values", x.len()) });
            }
        }
        let slope = cfg.leaky_slope;
        let lrelu = |v: f64| if v > 0.0 { v } else { slope * v };

        // Spectral filter responses on the rFFT grid.
        let filters: Vec<_> = params.filters_hz(cfg).into_iter().map(|f| self.sf.freqs().iter().map(|&x| f.response(x)).collect::<Vec<f64>>()).collect();

        // Stage A: spectra, filtered copies, spatial projection.
        let per_a: Vec<(Vec<Vec<Complex64>>, Vec<f64>, Vec<f64>)> = inputs
            .par_iter()
            .map(|x| {
                let spectra: Vec<Vec<Complex64>> = (0..e_n).map(|e| self.sf.spectrum(&x[e * t..(e + 1) * t])).collect();
                let mut xf = vec![0.0; c_n * e_n * t];
                let mut s = vec![0.0; k1 * t];
                for c in 0..c_n {
                    for e in 0..e_n {
                        let y = self.sf.filtered(&spectra[e], &filters[c]);
                        xf[(c * e_n + e) * t..(c * e_n + e + 1) * t].copy_from_slice(&y);
                    }
                    for d in 0..d_n {
                        let o = c * d_n + d;
                        let dst = &mut s[o * t..(o + 1) * t];
                        for e in 0..e_n {
                            let w = params.spatial[o * e_n + e];
                            for (dv, xv) in dst.iter_mut().zip(&xf[(c * e_n + e) * t..(c * e_n + e + 1) * t]) {
                                *dv += w * xv;
                            }
                        }
                    }
                }
                (spectra, xf, s)
            })
            .collect();
        let mut spectra = Vec::with_capacity(batch * e_n);
        let mut xf = Vec::with_capacity(batch * c_n * e_n * t);
        let mut s = Vec::with_capacity(batch * k1 * t);
        for (sp, x, sv) in per_a {
            spectra.extend(sp);
            xf.extend(x);
            s.extend(sv);
        }

        let bn1 = bn_forward(&s, batch, k1, t, &params.bn1, mode, cfg.bn_eps);

        // Stage C: first separable block.
        let mut a1 = vec![0.0; batch * k1 * t];
        let mut d1 = vec![0.0; batch * k1 * t];
        let mut p1 = vec![0.0; batch * k2 * t];
        a1.par_chunks_mut(k1 * t).zip(d1.par_chunks_mut(k1 * t)).zip(p1.par_chunks_mut(k2 * t)).enumerate().for_each(|(b, ((a, d), p))| {
            for (av, yv) in a.iter_mut().zip(&bn1.y[b * k1 * t..(b + 1) * k1 * t]) {
                *av = lrelu(*yv);
            }
            depthwise_fwd(a, &params.depth1, k1, t, cfg.kernel1, cfg.pad1(), d);
            pointwise_fwd(d, &params.point1, c_n, d_n, d_n * cfg.f1, t, p);
        });

        let bn2 = bn_forward(&p1, batch, k2, t, &params.bn2, mode, cfg.bn_eps);

        // Dropout masks drawn in sample order.
        let keep = 1.0 - cfg.dropout;
        let mut draw_mask = |n: usize| -> Vec<f64> {
            if mode == Mode::Eval || cfg.dropout == 0.0 {
                vec![1.0; n]
            } else {
                (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
            }
        };
        let mask1 = draw_mask(batch * k2 * t2);
        let mask2 = draw_mask(batch * k3);

        // Stage D: pooling, dropout, second separable block.
        let mut qd = vec![0.0; batch * k2 * t2];
        let mut d2 = vec![0.0; batch * k2 * t2];
        let mut p2 = vec![0.0; batch * k3 * t2];
        let pool = cfg.pool1;
        qd.par_chunks_mut(k2 * t2).zip(d2.par_chunks_mut(k2 * t2)).zip(p2.par_chunks_mut(k3 * t2)).enumerate().for_each(|(b, ((q, d), p))| {
            let y = &bn2.y[b * k2 * t..(b + 1) * k2 * t];
            let m = &mask1[b * k2 * t2..(b + 1) * k2 * t2];
            for ch in 0..k2 {
                for i in 0..t2 {
                    let avg = (0..pool).map(|j| lrelu(y[ch * t + i * pool + j])).sum::<f64>() / pool as f64;
                    q[ch * t2 + i] = avg * m[ch * t2 + i];
                }
            }
            depthwise_fwd(q, &params.depth2, k2, t2, cfg.kernel2, cfg.pad2(), d);
            pointwise_fwd(d, &params.point2, c_n, d_n * cfg.f1, d_n * cfg.f1 * cfg.f2, t2, p);
        });

        let bn3 = bn_forward(&p2, batch, k3, t2, &params.bn3, mode, cfg.bn_eps);

        // Stage E: global pooling, dropout, grouped reduction, sigmoid.
        let kr = d_n * cfg.f1 * cfg.f2;
        let mut gd = vec![0.0; batch * k3];
        let mut z = vec![0.0; batch * c_n];
        for b in 0..batch {
            for ch in 0..k3 {
                let y = &bn3.y[(b * k3 + ch) * t2..(b * k3 + ch + 1) * t2];
                let g = y.iter().map(|&v| lrelu(v)).sum::<f64>() / t2 as f64;
                gd[b * k3 + ch] = g * mask2[b * k3 + ch];
            }
            for c in 0..c_n {
                let mut acc = params.reduce_b[c];
                for j in 0..kr {
                    acc += params.reduce_w[c * kr + j] * gd[b * k3 + c * kr + j];
                }
                z[b * c_n + c] = sigmoid(acc);
            }
        }

        Ok(BatchForward { batch, mode, z, spectra, responses: filters, xf, bn1, a1, d1, bn2, mask1, qd, d2, bn3, mask2, gd })
    }

    /// Gradients of a scalar loss given `dz = ∂L/∂z` (`[B × C]`).
    pub fn backward(&self, params: &ModelParams, fwd: &BatchForward, dz: &[f64]) -> ModelParams {
        let cfg = &self.cfg;
        let (c_n, d_n, e_n, t) = (cfg.n_components, cfg.spatial_filters, cfg.n_electrodes, cfg.n_times);
        let (k1, k2, k3, t2) = (cfg.k1(), cfg.k2(), cfg.k3(), cfg.t2());
        let batch = fwd.batch;
        let slope = cfg.leaky_slope;
        let dlrelu = |y: f64| if y > 0.0 { 1.0 } else { slope };
        let kr = d_n * cfg.f1 * cfg.f2;
        let mut grad = ModelParams::zeros(cfg);

        // Reduction and sigmoid.
        let mut dy3 = vec![0.0; batch * k3 * t2];
        for b in 0..batch {
            for c in 0..c_n {
                let zv = fwd.z[b * c_n + c];
                let dpre = dz[b * c_n + c] * zv * (1.0 - zv);
                grad.reduce_b[c] += dpre;
                for j in 0..kr {
                    let ch = c * kr + j;
                    grad.reduce_w[c * kr + j] += dpre * fwd.gd[b * k3 + ch];
                    let dgap = params.reduce_w[c * kr + j] * dpre * fwd.mask2[b * k3 + ch] / t2 as f64;
                    for i in 0..t2 {
                        let idx = (b * k3 + ch) * t2 + i;
                        dy3[idx] = dgap * dlrelu(fwd.bn3.y[idx]);
                    }
                }
            }
        }
        let dp2 = bn_backward(&dy3, &fwd.bn3, batch, k3, t2, &params.bn3.gamma, fwd.mode, &mut grad.bn3.gamma, &mut grad.bn3.beta);

        // Second separable block, pooling and dropout, per sample.
        let pool = cfg.pool1;
        let per_d: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let mut dd2 = vec![0.0; k2 * t2];
                let mut dw_point2 = vec![0.0; params.point2.len()];
                pointwise_bwd(
                    &fwd.d2[b * k2 * t2..(b + 1) * k2 * t2],
                    &params.point2,
                    &dp2[b * k3 * t2..(b + 1) * k3 * t2],
                    c_n,
                    d_n * cfg.f1,
                    kr,
                    t2,
                    &mut dd2,
                    &mut dw_point2,
                );
                let mut dqd = vec![0.0; k2 * t2];
                let mut dw_depth2 = vec![0.0; params.depth2.len()];
                depthwise_bwd(&fwd.qd[b * k2 * t2..(b + 1) * k2 * t2], &params.depth2, &dd2, k2, t2, cfg.kernel2, cfg.pad2(), &mut dqd, &mut dw_depth2);
                let mut dy2 = vec![0.0; k2 * t];
                for ch in 0..k2 {
                    for i in 0..t2 {
                        let dq = dqd[ch * t2 + i] * fwd.mask1[(b * k2 + ch) * t2 + i] / pool as f64;
                        for j in 0..pool {
                            let ti = i * pool + j;
                            dy2[ch * t + ti] = dq * dlrelu(fwd.bn2.y[(b * k2 + ch) * t + ti]);
                        }
                    }
                }
                (dy2, dw_point2, dw_depth2)
            })
            .collect();
        let mut dy2 = Vec::with_capacity(batch * k2 * t);
        for (d, wp, wd) in per_d {
            dy2.extend(d);
            add_into(&mut grad.point2, &wp);
            add_into(&mut grad.depth2, &wd);
        }
        let dp1 = bn_backward(&dy2, &fwd.bn2, batch, k2, t, &params.bn2.gamma, fwd.mode, &mut grad.bn2.gamma, &mut grad.bn2.beta);

        // First separable block, per sample.
        let per_c: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let mut dd1 = vec![0.0; k1 * t];
                let mut dw_point1 = vec![0.0; params.point1.len()];
                pointwise_bwd(
                    &fwd.d1[b * k1 * t..(b + 1) * k1 * t],
                    &params.point1,
                    &dp1[b * k2 * t..(b + 1) * k2 * t],
                    c_n,
                    d_n,
                    d_n * cfg.f1,
                    t,
                    &mut dd1,
                    &mut dw_point1,
                );
                let mut da1 = vec![0.0; k1 * t];
                let mut dw_depth1 = vec![0.0; params.depth1.len()];
                depthwise_bwd(&fwd.a1[b * k1 * t..(b + 1) * k1 * t], &params.depth1, &dd1, k1, t, cfg.kernel1, cfg.pad1(), &mut da1, &mut dw_depth1);
                for (i, v) in da1.iter_mut().enumerate() {
                    *v *= dlrelu(fwd.bn1.y[b * k1 * t + i]);
                }
                (da1, dw_point1, dw_depth1)
            })
            .collect();
        let mut dy1 = Vec::with_capacity(batch * k1 * t);
        for (d, wp, wd) in per_c {
            dy1.extend(d);
            add_into(&mut grad.point1, &wp);
            add_into(&mut grad.depth1, &wd);
        }
        let ds = bn_backward(&dy1, &fwd.bn1, batch, k1, t, &params.bn1.gamma, fwd.mode, &mut grad.bn1.gamma, &mut grad.bn1.beta);

        // Spatial projection and spectral filters, per sample.
        let nb = self.sf.freqs().len();
        let per_a: Vec<(Vec<f64>, Vec<f64>)> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let mut dw_spatial = vec![0.0; params.spatial.len()];
                let mut dresp = vec![0.0; c_n * nb];
                let mut dxf = vec![0.0; t];
                for c in 0..c_n {
                    for e in 0..e_n {
                        let xf = &fwd.xf[((b * c_n + c) * e_n + e) * t..((b * c_n + c) * e_n + e + 1) * t];
                        dxf.fill(0.0);
                        for d in 0..d_n {
                            let o = c * d_n + d;
                            let g = &ds[(b * k1 + o) * t..(b * k1 + o + 1) * t];
                            dw_spatial[o * e_n + e] += g.iter().zip(xf).map(|(a, x)| a * x).sum::<f64>();
                            let w = params.spatial[o * e_n + e];
                            for (dv, gv) in dxf.iter_mut().zip(g) {
                                *dv += w * gv;
                            }
                        }
                        self.sf.accumulate_response_grad(&fwd.spectra[b * e_n + e], &dxf, &mut dresp[c * nb..(c + 1) * nb]);
                    }
                }
                (dw_spatial, dresp)
            })
            .collect();
        let mut dresp = vec![0.0; c_n * nb];
        for (ws, dr) in per_a {
            add_into(&mut grad.spatial, &ws);
            add_into(&mut dresp, &dr);
        }
        let clamps = ModelParams::filter_clamps(cfg);
        let nyq = cfg.fs / 2.0;
        let filters_hz = params.filters_hz(cfg);
        for c in 0..c_n {
            let (_, mask) = clamps.apply(&params.raw_filter(c));
            let g = self.sf.param_grad(&filters_hz[c], &dresp[c * nb..(c + 1) * nb]);
            // Parameters are stored as fractions of Nyquist.
            grad.filter[3 * c] = g[0] * nyq * mask[0];
            grad.filter[3 * c + 1] = g[1] * nyq * mask[1];
            grad.filter[3 * c + 2] = g[2] * mask[2];
        }
        let _ = &fwd.responses;
        grad
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics (unbiased variance, configured momentum).
    pub fn update_running(&self, params: &mut ModelParams, fwd: &BatchForward) {
        if fwd.mode != Mode::Train {
            return;
        }
        let cfg = &self.cfg;
        let m = cfg.bn_momentum;
        let n1 = (fwd.batch * cfg.n_times) as f64;
        let n3 = (fwd.batch * cfg.t2()) as f64;
        for (bn, cache, n) in [(&mut params.bn1, &fwd.bn1, n1), (&mut params.bn2, &fwd.bn2, n1), (&mut params.bn3, &fwd.bn3, n3)] {
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for c in 0..bn.len() {
                bn.running_mean[c] = (1.0 - m) * bn.running_mean[c] + m * cache.mean[c];
                bn.running_var[c] = (1.0 - m) * bn.running_var[c] + m * cache.var[c] * unbias;
            }
        }
    }

    /// Eval-mode latents for a batch, `[B][C]`.
    pub fn latents(&self, params: &ModelParams, inputs: &[&[f64]]) -> Result<Vec<LatentVector>, ModelError> {
        let mut unused = crate::rng::seeded(0);
        let fwd = self.forward(params, inputs, Mode::Eval, &mut unused)?;
        Ok((0..fwd.batch).map(|b| fwd.latent(b)).collect())
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Single-window convenience wrapper.
pub fn forward_latent(
    net: &Network,
    window: &ndarray::Array2<f64>,
    params: &ModelParams,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<LatentVector, ModelError> {
    let cfg = net.config();
    if window.dim() != (cfg.n_electrodes, cfg.n_times) {
        return Err(ModelError::ShapeMismatch { expected: format!("[{} × {}]", cfg.n_electrodes, cfg.n_times), got: format!("{:?}", window.dim()) });
    }
    let data: Vec<f64> = window.iter().copied().collect();
    let fwd = net.forward(params, &[&data], mode, rng)?;
    Ok(fwd.latent(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            n_components: 3,
            spatial_filters: 2,
            f1: 2,
            f2: 2,
            kernel1: 9,
            pool1: 4,
            kernel2: 5,
            dropout: 0.25,
            leaky_slope: 0.01,
            n_electrodes: 4,
            n_times: 64,
            fs: 64.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            filter_init: (12.0, 24.0, 2.0),
        }
    }

    fn random_inputs(cfg: &ModelConfig, batch: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng::seeded(seed);
        (0..batch).map(|_| (0..cfg.n_electrodes * cfg.n_times).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn eval_is_deterministic_and_in_range() {
        let cfg = small_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let p = ModelParams::init(&cfg, &mut crate::rng::seeded(1));
        let x = random_inputs(&cfg, 3, 2);
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let a = net.latents(&p, &refs).unwrap();
        let b = net.latents(&p, &refs).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|z| z.0.iter()).all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_independent_of_batch_composition() {
        let cfg = small_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let p = ModelParams::init(&cfg, &mut crate::rng::seeded(1));
        let x = random_inputs(&cfg, 3, 2);
        let all = net.latents(&p, &[&x[0], &x[1], &x[2]]).unwrap();
        let one = net.latents(&p, &[&x[1]]).unwrap();
        assert_eq!(all[1], one[0]);
    }

    #[test]
    fn shape_mismatch() {
        let cfg = small_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let p = ModelParams::init(&cfg, &mut crate::rng::seeded(1));
        let w = Array2::<f64>::zeros((3, 64));
        assert!(matches!(forward_latent(&net, &w, &p, Mode::Eval, &mut crate::rng::seeded(0)), Err(ModelError::ShapeMismatch { .. })));
    }

    #[test]
    fn dropout_off_in_eval_on_in_train() {
        let cfg = small_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let p = ModelParams::init(&cfg, &mut crate::rng::seeded(1));
        let x = random_inputs(&cfg, 4, 3);
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let f1 = net.forward(&p, &refs, Mode::Train, &mut crate::rng::seeded(10)).unwrap();
        let f2 = net.forward(&p, &refs, Mode::Train, &mut crate::rng::seeded(11)).unwrap();
        assert_ne!(f1.z, f2.z);
        let f3 = net.forward(&p, &refs, Mode::Train, &mut crate::rng::seeded(10)).unwrap();
        assert_eq!(f1.z, f3.z);
    }

    fn loss_of(net: &Network, p: &ModelParams, refs: &[&[f64]], weights: &[f64], mode: Mode) -> f64 {
        let fwd = net.forward(p, refs, mode, &mut crate::rng::seeded(99)).unwrap();
        fwd.z.iter().zip(weights).map(|(z, w)| w * z * z).sum()
    }

    #[test]
    fn gradients_match_finite_differences_all_tensors() {
        let cfg = small_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let mut rng = crate::rng::seeded(4);
        let mut p = ModelParams::init(&cfg, &mut rng);
        for (_, t) in p.trainable_mut() {
            for v in t.iter_mut().skip(1).step_by(3) {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        for c in 0..cfg.n_components {
            p.filter[3 * c] = rng.random_range(0.2..0.6);
            p.filter[3 * c + 1] = rng.random_range(0.3..0.9);
            p.filter[3 * c + 2] = rng.random_range(1.5..4.0);
        }
        let x = random_inputs(&cfg, 3, 5);
        let refs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let weights: Vec<f64> = (0..3 * cfg.n_components).map(|_| rng.random_range(-1.0..1.0)).collect();
        for mode in [Mode::Train, Mode::Eval] {
            let fwd = net.forward(&p, &refs, mode, &mut crate::rng::seeded(99)).unwrap();
            let dz: Vec<f64> = fwd.z.iter().zip(&weights).map(|(z, w)| 2.0 * w * z).collect();
            let g = net.backward(&p, &fwd, &dz);
            let names: Vec<&str> = p.trainable().iter().map(|(n, _)| *n).collect();
            for (ti, name) in names.iter().enumerate() {
                let len = p.trainable()[ti].1.len();
                for i in (0..len).step_by((len / 5).max(1)) {
                    let h = 1e-6;
                    let mut plus = p.clone();
                    plus.trainable_mut()[ti].1[i] += h;
                    let mut minus = p.clone();
                    minus.trainable_mut()[ti].1[i] -= h;
                    let fd = (loss_of(&net, &plus, &refs, &weights, mode) - loss_of(&net, &minus, &refs, &weights, mode)) / (2.0 * h);
                    let an = g.trainable()[ti].1[i];
                    let scale = fd.abs().max(an.abs()).max(1e-7);
                    assert!((fd - an).abs() / scale < 1e-4, "{mode:?} {name}[{i}]: fd {fd} vs analytic {an}");
                }
            }
        }
    }
}

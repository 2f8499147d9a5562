//! Small linear probes on frozen latents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ProbeConfig, ProbeError};
use crate::rng::Rng as SeededRng;
use crate::training::AdamW;

const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLoss {
    /// Independent sigmoid per output against one-hot targets.
    Bce,
    CrossEntropy,
}

/// Which slices of the weight matrix get divided by their L1 norm before
/// every forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNorm {
    None,
    /// One column per input, summed over outputs.
    Column,
    /// One row per output, summed over inputs.
    Row,
}

/// Divides every column of the row-major `[out × inp]` matrix by its L1
/// norm. Columns with norm below `1e-8` are left unchanged.
pub fn normalize_columns(w: &[f64], out: usize, inp: usize) -> Vec<f64> {
    let mut r = w.to_vec();
    for i in 0..inp {
        let s: f64 = (0..out).map(|o| w[o * inp + i].abs()).sum();
        if s > NORM_EPS {
            (0..out).for_each(|o| r[o * inp + i] /= s);
        }
    }
    r
}

pub fn normalize_rows(w: &[f64], out: usize, inp: usize) -> Vec<f64> {
    let mut r = w.to_vec();
    for row in r.chunks_mut(inp).take(out) {
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s > NORM_EPS {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    r
}

/// Affine batch normalization over the probe inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl AffineNorm {
    pub fn new(n: usize) -> Self {
        AffineNorm { gamma: vec![1.0; n], beta: vec![0.0; n], running_mean: vec![0.0; n], running_var: vec![1.0; n], momentum: 0.1, eps: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `[n_out × n_in]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub norm: Option<AffineNorm>,
    pub weight_norm: WeightNorm,
    pub loss: ProbeLoss,
}

/// Gradients of the trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LinearProbe {
    /// PyTorch-style uniform `±1/√n_in` initialization.
    pub fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, affine: bool, weight_norm: WeightNorm, loss: ProbeLoss, rng: &mut R) -> Self {
        let b = 1.0 / (n_in as f64).sqrt();
        LinearProbe {
            n_in,
            n_out,
            weight: (0..n_in * n_out).map(|_| rng.random_range(-b..b)).collect(),
            bias: (0..n_out).map(|_| rng.random_range(-b..b)).collect(),
            norm: affine.then(|| AffineNorm::new(n_in)),
            weight_norm,
            loss,
        }
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len() + self.norm.as_ref().map_or(0, |n| n.gamma.len() + n.beta.len())
    }

    pub fn effective_weight(&self) -> Vec<f64> {
        match self.weight_norm {
            WeightNorm::None => self.weight.clone(),
            WeightNorm::Column => normalize_columns(&self.weight, self.n_out, self.n_in),
            WeightNorm::Row => normalize_rows(&self.weight, self.n_out, self.n_in),
        }
    }

    fn normalize_eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.norm {
            None => x.to_vec(),
            Some(n) => x.iter().enumerate().map(|(i, v)| n.gamma[i] * (v - n.running_mean[i]) / (n.running_var[i] + n.eps).sqrt() + n.beta[i]).collect(),
        }
    }

    fn project(&self, w: &[f64], y: &[f64]) -> Vec<f64> {
        (0..self.n_out).map(|o| self.bias[o] + (0..self.n_in).map(|i| w[o * self.n_in + i] * y[i]).sum::<f64>()).collect()
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.project(&self.effective_weight(), &self.normalize_eval(x))
    }

    pub fn predict(&self, xs: &[Vec<f64>]) -> Vec<usize> {
        let w = self.effective_weight();
        xs.iter()
            .map(|x| {
                let l = self.project(&w, &self.normalize_eval(x));
                l.iter().enumerate().fold(0, |best, (i, v)| if *v > l[best] { i } else { best })
            })
            .collect()
    }

    /// Train-mode loss and gradients on a batch; batch statistics are used
    /// for the affine normalization.
    pub fn loss_and_grad(&self, xs: &[&[f64]], labels: &[usize]) -> (f64, ProbeGrad, Option<(Vec<f64>, Vec<f64>)>) {
        let (b, ni, no) = (xs.len(), self.n_in, self.n_out);
        let bf = b as f64;
        // Normalized inputs and batch statistics.
        let (ys, xhat, stats) = match &self.norm {
            None => (xs.iter().map(|x| x.to_vec()).collect::<Vec<_>>(), Vec::new(), None),
            Some(n) => {
                let mean: Vec<f64> = (0..ni).map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / bf).collect();
                let var: Vec<f64> = (0..ni).map(|i| xs.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / bf).collect();
                let xhat: Vec<Vec<f64>> = xs.iter().map(|x| (0..ni).map(|i| (x[i] - mean[i]) / (var[i] + n.eps).sqrt()).collect()).collect();
                let ys = xhat.iter().map(|h| (0..ni).map(|i| n.gamma[i] * h[i] + n.beta[i]).collect()).collect();
                (ys, xhat, Some((mean, var)))
            }
        };
        let w = self.effective_weight();
        let mut loss = 0.0;
        let mut dl = vec![vec![0.0; no]; b];
        for (s, y) in ys.iter().enumerate() {
            let l = self.project(&w, y);
            match self.loss {
                ProbeLoss::CrossEntropy => {
                    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = l.iter().map(|v| (v - m).exp()).sum();
                    loss += (z.ln() + m - l[labels[s]]) / bf;
                    for o in 0..no {
                        let p = (l[o] - m).exp() / z;
                        dl[s][o] = (p - if o == labels[s] { 1.0 } else { 0.0 }) / bf;
                    }
                }
                ProbeLoss::Bce => {
                    let scale = bf * no as f64;
                    for o in 0..no {
                        let t = if o == labels[s] { 1.0 } else { 0.0 };
                        // softplus(l) − t·l, stable form
                        let sp = l[o].max(0.0) + (-l[o].abs()).exp().ln_1p();
                        loss += (sp - t * l[o]) / scale;
                        dl[s][o] = (1.0 / (1.0 + (-l[o]).exp()) - t) / scale;
                    }
                }
            }
        }
        let mut dw_eff = vec![0.0; no * ni];
        let mut db = vec![0.0; no];
        let mut dy = vec![vec![0.0; ni]; b];
        for s in 0..b {
            for o in 0..no {
                db[o] += dl[s][o];
                for i in 0..ni {
                    dw_eff[o * ni + i] += dl[s][o] * ys[s][i];
                    dy[s][i] += dl[s][o] * w[o * ni + i];
                }
            }
        }
        let dw = self.weight_norm_backward(&dw_eff);
        let (mut dgamma, mut dbeta) = (Vec::new(), Vec::new());
        if self.norm.is_some() {
            dgamma = (0..ni).map(|i| (0..b).map(|s| dy[s][i] * xhat[s][i]).sum()).collect();
            dbeta = (0..ni).map(|i| (0..b).map(|s| dy[s][i]).sum()).collect();
        }
        (loss, ProbeGrad { weight: dw, bias: db, gamma: dgamma, beta: dbeta }, stats)
    }

    fn weight_norm_backward(&self, g: &[f64]) -> Vec<f64> {
        let (no, ni, w) = (self.n_out, self.n_in, &self.weight);
        let mut out = g.to_vec();
        // For a slice v with s = Σ|v|: ∂L/∂v_k = g_k/s − sign(v_k)·Σ_j g_j v_j / s².
        let mut apply = |idx: Vec<usize>| {
            let s: f64 = idx.iter().map(|&k| w[k].abs()).sum();
            if s <= NORM_EPS {
                return;
            }
            let dot: f64 = idx.iter().map(|&k| g[k] * w[k]).sum();
            for &k in &idx {
                out[k] = g[k] / s - w[k].signum() * dot / (s * s);
            }
        };
        match self.weight_norm {
            WeightNorm::None => {}
            WeightNorm::Column => (0..ni).for_each(|i| apply((0..no).map(|o| o * ni + i).collect())),
            WeightNorm::Row => (0..no).for_each(|o| apply((0..ni).map(|i| o * ni + i).collect())),
        }
        out
    }
}

/// Trains with class-balanced minibatches drawn with replacement, so
/// minority classes are oversampled. Returns the per-step loss.
pub fn train_probe(probe: &mut LinearProbe, features: &[Vec<f64>], labels: &[usize], cfg: &ProbeConfig, rng: &mut SeededRng) -> Result<Vec<f64>, ProbeError> {
    if features.is_empty() {
        return Err(ProbeError::EmptyInput);
    }
    if features.len() != labels.len() {
        return Err(ProbeError::LengthMismatch(features.len(), labels.len()));
    }
    if let Some(bad) = features.iter().find(|f| f.len() != probe.n_in) {
        return Err(ProbeError::InvalidConfig(format!("feature of length {} for a probe with {} inputs", bad.len(), probe.n_in)));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); probe.n_out];
    for (i, &l) in labels.iter().enumerate() {
        if l >= probe.n_out {
            return Err(ProbeError::InvalidConfig(format!("label {l} outside {} classes", probe.n_out)));
        }
        by_class[l].push(i);
    }
    let present: Vec<&Vec<usize>> = by_class.iter().filter(|c| !c.is_empty()).collect();
    let steps = cfg.schedule.steps(features.len(), cfg.batch_size);
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| {
                let c = present[rng.random_range(0..present.len())];
                c[rng.random_range(0..c.len())]
            })
            .collect();
        let xs: Vec<&[f64]> = idx.iter().map(|&i| features[i].as_slice()).collect();
        let ls: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (loss, g, stats) = probe.loss_and_grad(&xs, &ls);
        losses.push(loss);
        match probe.norm.as_mut() {
            Some(n) => {
                opt.step(&mut [&mut probe.weight, &mut probe.bias, &mut n.gamma, &mut n.beta], &[&g.weight, &g.bias, &g.gamma, &g.beta]);
                let (mean, var) = stats.expect("batch statistics with affine norm");
                let unbias = xs.len() as f64 / (xs.len() as f64 - 1.0).max(1.0);
                for i in 0..mean.len() {
                    n.running_mean[i] = (1.0 - n.momentum) * n.running_mean[i] + n.momentum * mean[i];
                    n.running_var[i] = (1.0 - n.momentum) * n.running_var[i] + n.momentum * var[i] * unbias;
                }
            }
            None => opt.step(&mut [&mut probe.weight, &mut probe.bias], &[&g.weight, &g.bias]),
        }
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::{prop_assert, proptest};

    #[test]
    fn column_examples() {
        // One column [2, −2, 0, 0, 0] next to a zero column.
        let mut w = vec![0.0; 10];
        w[0] = 2.0;
        w[2] = -2.0;
        let n = normalize_columns(&w, 5, 2);
        assert_eq!((0..5).map(|o| n[o * 2]).collect::<Vec<_>>(), vec![0.5, -0.5, 0.0, 0.0, 0.0]);
        assert_eq!((0..5).map(|o| n[o * 2 + 1]).collect::<Vec<_>>(), vec![0.0; 5]);
    }

    proptest! {
        #[test]
        fn nonzero_columns_have_unit_l1(w in proptest::collection::vec(-5.0f64..5.0, 25)) {
            let n = normalize_columns(&w, 5, 5);
            for i in 0..5 {
                let s: f64 = (0..5).map(|o| n[o * 5 + i].abs()).sum();
                let raw: f64 = (0..5).map(|o| w[o * 5 + i].abs()).sum();
                if raw > 1e-8 {
                    prop_assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    fn fd_check(mut p: LinearProbe) {
        let mut rng = seeded(9);
        let xs: Vec<Vec<f64>> = (0..7).map(|_| (0..p.n_in).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..7).map(|i| i % p.n_out).collect();
        if let Some(n) = p.norm.as_mut() {
            n.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
            n.beta.iter_mut().for_each(|g| *g = rng.random_range(-0.5..0.5));
        }
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let (_, g, _) = p.loss_and_grad(&refs, &labels);
        let h = 1e-6;
        let check = |get: &dyn Fn(&mut LinearProbe) -> &mut Vec<f64>, grad: &[f64]| {
            for k in 0..grad.len() {
                let (mut a, mut b) = (p.clone(), p.clone());
                get(&mut a)[k] += h;
                get(&mut b)[k] -= h;
                let fd = (a.loss_and_grad(&refs, &labels).0 - b.loss_and_grad(&refs, &labels).0) / (2.0 * h);
                assert!((fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{k}: fd {fd} analytic {}", grad[k]);
            }
        };
        check(&|q| &mut q.weight, &g.weight);
        check(&|q| &mut q.bias, &g.bias);
        if p.norm.is_some() {
            check(&|q| &mut q.norm.as_mut().unwrap().gamma, &g.gamma);
            check(&|q| &mut q.norm.as_mut().unwrap().beta, &g.beta);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(4);
        fd_check(LinearProbe::init(5, 5, true, WeightNorm::Column, ProbeLoss::CrossEntropy, &mut rng));
        fd_check(LinearProbe::init(5, 5, true, WeightNorm::Row, ProbeLoss::CrossEntropy, &mut rng));
        fd_check(LinearProbe::init(2, 2, false, WeightNorm::None, ProbeLoss::Bce, &mut rng));
    }

    #[test]
    fn parameter_counts() {
        let mut rng = seeded(0);
        assert_eq!(LinearProbe::init(2, 2, false, WeightNorm::None, ProbeLoss::Bce, &mut rng).n_params(), 6);
        assert_eq!(LinearProbe::init(5, 5, true, WeightNorm::Column, ProbeLoss::CrossEntropy, &mut rng).n_params(), 40);
    }
}

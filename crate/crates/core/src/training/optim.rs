use serde::{Deserialize, Serialize};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `params[i]` and `grads[i]` must keep the same lengths
    /// across calls.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr·sign(g) (up to eps).
        let mut p = vec![1.0, -2.0];
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut [&mut p], &[&[3.0, -0.5]]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = vec![2.0];
        let mut opt = AdamW::new(0.1, 0.5);
        opt.step(&mut [&mut p], &[&[0.0]]);
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut opt = AdamW::new(0.05, 0.0);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * (x - 1.0)).collect();
            opt.step(&mut [&mut p], &[&g]);
        }
        assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-3));
    }
}

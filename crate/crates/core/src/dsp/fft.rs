use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Real-input FFT of fixed length built on a complex transform.
#[derive(Clone)]
pub struct RealFft {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFft").field("n", &self.n).finish()
    }
}

impl RealFft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        RealFft { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_bins(&self) -> usize {
        self.n / 2 + 1
    }

    /// Non-negative frequency half of the spectrum (`n/2 + 1` bins).
    pub fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n);
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf.truncate(self.n_bins());
        buf
    }

    /// Inverse of [`forward`](Self::forward), scaled by `1/n`. Imaginary parts
    /// of the DC and (even `n`) Nyquist bins are ignored.
    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        assert_eq!(spec.len(), self.n_bins());
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(spec[0].re, 0.0);
        for k in 1..spec.len() {
            if 2 * k == n {
                buf[k] = Complex64::new(spec[k].re, 0.0);
            } else {
                buf[k] = spec[k];
                buf[n - k] = spec[k].conj();
            }
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }
}

/// Bin frequencies of a length-`n` real FFT at rate `fs`.
pub fn rfft_freqs(n: usize, fs: f64) -> Vec<f64> {
    (0..n / 2 + 1).map(|k| k as f64 * fs / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_even_and_odd() {
        for n in [8usize, 9, 240] {
            let f = RealFft::new(n);
            let x: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64).sin() + i as f64 * 0.01).collect();
            let y = f.inverse(&f.forward(&x));
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

//! Trainable generalized-Gaussian band filters applied in the frequency
//! domain.
//!
//! Each component owns one filter
//! `F(x) = exp(-(|x − μ| / α)^β)` with `α = h / (2 ln(2)^{1/β})`, so that
//! `h` is the full width at half maximum for every shape `β`. `β = 2` is a
//! Gaussian; large `β` approaches a box filter.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{rfft_freqs, RealFft};

const LN2: f64 = std::f64::consts::LN_2;

/// One filter, in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFilter {
    /// Centre frequency.
    pub mu: f64,
    /// Bandwidth (FWHM).
    pub h: f64,
    /// Shape exponent.
    pub beta: f64,
}

impl GaussianFilter {
    pub fn new(mu: f64, h: f64, beta: f64) -> Self {
        GaussianFilter { mu, h, beta }
    }

    pub fn alpha(&self) -> f64 {
        self.h / (2.0 * LN2.powf(1.0 / self.beta))
    }

    pub fn response(&self, x: f64) -> f64 {
        (-((x - self.mu).abs() / self.alpha()).powf(self.beta)).exp()
    }

    /// `(F, ∂F/∂μ, ∂F/∂h, ∂F/∂β)` at frequency `x`.
    pub fn response_grad(&self, x: f64) -> (f64, f64, f64, f64) {
        let f = self.response(x);
        let d = x - self.mu;
        // (|d|/α)^β = ln2 · v^β with v = 2|d|/h.
        let v = 2.0 * d.abs() / self.h;
        if v == 0.0 {
            return (f, 0.0, 0.0, 0.0);
        }
        let vb = v.powf(self.beta);
        let dmu = f * LN2 * self.beta * vb / v * 2.0 * d.signum() / self.h;
        let dh = f * LN2 * self.beta * vb / self.h;
        let dbeta = -f * LN2 * vb * v.ln();
        (f, dmu, dh, dbeta)
    }
}

/// Box constraints on filter parameters, enforced by projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterClamps {
    pub mu: (f64, f64),
    pub h: (f64, f64),
    pub beta: (f64, f64),
}

impl FilterClamps {
    /// `μ ∈ [0, fs/2]`, `h ∈ [1, fs]`, `β ∈ [1, 16]`.
    pub fn for_rate(fs: f64) -> Self {
        FilterClamps { mu: (0.0, fs / 2.0), h: (1.0, fs), beta: (1.0, 16.0) }
    }

    /// Clamped filter and per-parameter pass-through masks (1 inside the
    /// closed interval, 0 beyond it).
    pub fn apply(&self, raw: &GaussianFilter) -> (GaussianFilter, [f64; 3]) {
        let clamp = |v: f64, (lo, hi): (f64, f64)| (v.clamp(lo, hi), if v < lo || v > hi { 0.0 } else { 1.0 });
        let (mu, m0) = clamp(raw.mu, self.mu);
        let (h, m1) = clamp(raw.h, self.h);
        let (beta, m2) = clamp(raw.beta, self.beta);
        (GaussianFilter { mu, h, beta }, [m0, m1, m2])
    }
}

/// Magnitude responses `[C × n_freqs]`.
pub fn magnitude_response(filters: &[GaussianFilter], freqs: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((filters.len(), freqs.len()), |(c, k)| filters[c].response(freqs[k]))
}

/// Applies per-component filters on the rFFT grid of a fixed window length.
#[derive(Debug, Clone)]
pub struct SpectralFilter {
    fft: RealFft,
    freqs: Vec<f64>,
    /// `∂y/∂F_k` weight: 1/T for DC and Nyquist, 2/T otherwise.
    bin_weight: Vec<f64>,
}

impl SpectralFilter {
    pub fn new(n: usize, fs: f64) -> Self {
        let fft = RealFft::new(n);
        let freqs = rfft_freqs(n, fs);
        let bin_weight = (0..freqs.len()).map(|k| if k == 0 || 2 * k == n { 1.0 } else { 2.0 } / n as f64).collect();
        SpectralFilter { fft, freqs, bin_weight }
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fft.is_empty()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        self.fft.forward(x)
    }

    /// Inverse transform of `response ⊙ spectrum`.
    pub fn filtered(&self, spectrum: &[Complex64], response: &[f64]) -> Vec<f64> {
        let prod: Vec<Complex64> = spectrum.iter().zip(response).map(|(x, f)| x * f).collect();
        self.fft.inverse(&prod)
    }

    /// `∂L/∂F_k` given the input spectrum and the upstream gradient on the
    /// filtered output, accumulated into `acc`.
    pub fn accumulate_response_grad(&self, spectrum: &[Complex64], upstream: &[f64], acc: &mut [f64]) {
        let g = self.fft.forward(upstream);
        for k in 0..acc.len() {
            acc[k] += self.bin_weight[k] * (spectrum[k] * g[k].conj()).re;
        }
    }

    /// Chains per-bin response gradients to `(μ, h, β)` of one filter.
    pub fn param_grad(&self, filter: &GaussianFilter, dresponse: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (x, d) in self.freqs.iter().zip(dresponse) {
            let (_, dmu, dh, db) = filter.response_grad(*x);
            out[0] += d * dmu;
            out[1] += d * dh;
            out[2] += d * db;
        }
        out
    }
}

/// Filters every electrode of `window` (`[E × T]`) with every filter:
/// output `[C × E × T]`.
pub fn apply_filter(window: &Array2<f64>, filters: &[GaussianFilter], fs: f64) -> Array3<f64> {
    let (e, t) = window.dim();
    let sf = SpectralFilter::new(t, fs);
    let responses: Vec<Vec<f64>> = filters.iter().map(|f| sf.freqs.iter().map(|&x| f.response(x)).collect()).collect();
    let mut out = Array3::zeros((filters.len(), e, t));
    for (ei, row) in window.outer_iter().enumerate() {
        let spec = sf.spectrum(&row.to_vec());
        for (c, resp) in responses.iter().enumerate() {
            let y = sf.filtered(&spec, resp);
            for (ti, v) in y.into_iter().enumerate() {
                out[[c, ei, ti]] = v;
            }
        }
    }
    out
}

/// Gradient of a scalar loss with respect to raw `(μ, h, β)` of each filter,
/// given `upstream = ∂L/∂output` with the shape of [`apply_filter`]'s
/// output. Parameters outside `clamps` receive zero gradient.
pub fn filter_gradients(window: &Array2<f64>, raw: &[GaussianFilter], clamps: &FilterClamps, fs: f64, upstream: &Array3<f64>) -> Vec<[f64; 3]> {
    let (_, t) = window.dim();
    let sf = SpectralFilter::new(t, fs);
    let spectra: Vec<Vec<Complex64>> = window.outer_iter().map(|r| sf.spectrum(&r.to_vec())).collect();
    raw.iter()
        .enumerate()
        .map(|(c, f)| {
            let (eff, mask) = clamps.apply(f);
            let mut dresp = vec![0.0; sf.freqs.len()];
            for (ei, spec) in spectra.iter().enumerate() {
                let up: Vec<f64> = upstream.slice(ndarray::s![c, ei, ..]).to_vec();
                sf.accumulate_response_grad(spec, &up, &mut dresp);
            }
            let g = sf.param_grad(&eff, &dresp);
            [g[0] * mask[0], g[1] * mask[1], g[2] * mask[2]]
        })
        .collect()
}

/// Writes `freq_hz,response` rows for one filter.
pub fn write_response_csv(path: &Path, filter: &GaussianFilter, freqs: &[f64]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "freq_hz,response")?;
    for &x in freqs {
        writeln!(f, "{x},{}", filter.response(x))?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::PI;

    #[test]
    fn fwhm_identity_gaussian() {
        let f = GaussianFilter::new(24.0, 48.0, 2.0);
        assert_eq!(f.response(24.0), 1.0);
        assert!((f.response(0.0) - 0.5).abs() < 1e-15);
        assert!((f.response(48.0) - 0.5).abs() < 1e-15);
        // 24 / sqrt(ln 2)
        assert!((f.alpha() - 28.827).abs() < 1e-3);
        assert!((f.alpha() - 24.0 / LN2.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn box_limit_inside_band() {
        let f = GaussianFilter::new(20.0, 10.0, 200.0);
        assert!((f.response(24.0) - 1.0).abs() < 1e-15);
        assert!(f.response(26.0) < 1e-15);
    }

    #[test]
    fn fwhm_identity_any_shape() {
        let mut rng = crate::rng::seeded(3);
        for _ in 0..200 {
            let f = GaussianFilter::new(rng.random_range(0.0..80.0), rng.random_range(1.0..160.0), rng.random_range(1.0..16.0));
            assert!((f.response(f.mu + f.h / 2.0) - 0.5).abs() < 1e-12);
            assert!((f.response(f.mu - f.h / 2.0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_at_centre_and_half_power() {
        let (n, fs) = (240usize, 160.0);
        let f = GaussianFilter::new(20.0, 16.0, 2.0); // μ ± h/2 = 12, 28 Hz: exact bins
        for (freq, gain) in [(20.0, 1.0), (12.0, 0.5), (28.0, 0.5)] {
            let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs + 0.3).sin()).collect();
            let w = Array2::from_shape_vec((1, n), x.clone()).unwrap();
            let y = apply_filter(&w, &[f], fs);
            for i in 0..n {
                assert!((y[[0, 0, i]] - gain * x[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_components_bitwise() {
        let mut rng = crate::rng::seeded(5);
        let w = Array2::from_shape_fn((3, 64), |_| rng.random_range(-1.0..1.0));
        let f = GaussianFilter::new(10.0, 20.0, 3.0);
        let y = apply_filter(&w, &[f, f], 128.0);
        for e in 0..3 {
            for t in 0..64 {
                assert_eq!(y[[0, e, t]].to_bits(), y[[1, e, t]].to_bits());
            }
        }
    }

    #[test]
    fn clamp_masks_gradient() {
        let clamps = FilterClamps::for_rate(160.0);
        let (eff, mask) = clamps.apply(&GaussianFilter::new(24.0, 48.0, 0.5));
        assert_eq!(eff.beta, 1.0);
        assert_eq!(mask, [1.0, 1.0, 0.0]);
        let (_, mask) = clamps.apply(&GaussianFilter::new(24.0, 48.0, 1.0));
        assert_eq!(mask, [1.0, 1.0, 1.0]);
    }
}

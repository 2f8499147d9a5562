use ndarray::Array2;
use num_complex::Complex64;

use super::{DspError, RealFft};
use crate::io::RecordingBuffer;

/// Fourier-domain downsampling of one channel: truncate the spectrum to the
/// output length and invert. The output Nyquist bin (even lengths) collects
/// both the positive and negative input components.
pub fn resample_fft_slice(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>, DspError> {
    if fs_out > fs_in {
        return Err(DspError::UpsampleNotSupported { from: fs_in, to: fs_out });
    }
    let n = x.len();
    let m = (n as f64 * fs_out / fs_in).round() as usize;
    if m == n {
        return Ok(x.to_vec());
    }
    if m == 0 {
        return Err(DspError::SignalTooShort { len: n, needed: (fs_in / fs_out).ceil() as usize });
    }
    let spec = RealFft::new(n).forward(x);
    let mut out = vec![Complex64::new(0.0, 0.0); m / 2 + 1];
    out.copy_from_slice(&spec[..m / 2 + 1]);
    if m.is_multiple_of(2) {
        out[m / 2] *= 2.0;
    }
    let mut y = RealFft::new(m).inverse(&out);
    let scale = m as f64 / n as f64;
    for v in &mut y {
        *v *= scale;
    }
    Ok(y)
}

pub fn resample_fft(rec: &RecordingBuffer, fs_out: f64) -> Result<RecordingBuffer, DspError> {
    let mut rows = Vec::with_capacity(rec.n_channels());
    for row in rec.samples.outer_iter() {
        let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        rows.push(resample_fft_slice(&x, rec.fs, fs_out)?);
    }
    let m = rows.first().map_or(0, Vec::len);
    Ok(RecordingBuffer { samples: Array2::from_shape_fn((rows.len(), m), |(c, t)| rows[c][t] as f32), fs: fs_out, ..rec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        crate::stats::pearson(a, b)
    }

    #[test]
    fn identity_when_rates_match() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(resample_fft_slice(&x, 160.0, 160.0).unwrap(), x);
    }

    #[test]
    fn ten_hz_500_to_160() {
        let n = 5000; // 10 s
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 10.0 * i as f64 / 500.0).sin()).collect();
        let y = resample_fft_slice(&x, 500.0, 160.0).unwrap();
        assert_eq!(y.len(), 1600);
        let reference: Vec<f64> = (0..1600).map(|i| (2.0 * PI * 10.0 * i as f64 / 160.0).sin()).collect();
        assert!(corr(&y, &reference) >= 0.999);
    }

    #[test]
    fn upsample_rejected() {
        assert!(matches!(resample_fft_slice(&[0.0; 10], 100.0, 200.0), Err(DspError::UpsampleNotSupported { .. })));
    }

    #[test]
    fn output_band_limited() {
        // Broadband input; after resampling the spectrum of the output has
        // no bins above its own Nyquist by construction, and energy in the
        // top bins stays at the level of the input's content there.
        let n = 2048;
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919 % 1013) as f64 / 1013.0) - 0.5).collect();
        let y = resample_fft_slice(&x, 512.0, 128.0).unwrap();
        assert_eq!(y.len(), 512);
        let ys = RealFft::new(512).forward(&y);
        let xs = RealFft::new(n).forward(&x);
        // Bins below the new Nyquist carry the input spectrum scaled by m/n.
        for k in 1..200 {
            let ratio = ys[k].norm() / (xs[k].norm() * 0.25);
            assert!((ratio - 1.0).abs() < 1e-9, "bin {k}: {ratio}");
        }
    }
}

//! IIR design (Butterworth bandpass via bilinear transform, second-order
//! notch) and second-order-section filtering.

use num_complex::Complex64;

use super::DspError;

/// One biquad, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    /// Complex response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (self.a[0] + self.a[1] * z1 + self.a[2] * z2)
    }
}

/// Magnitude response of a cascade at `freq` Hz.
pub fn cascade_gain(sos: &[Sos], freq: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq / fs;
    sos.iter().map(|s| s.response(w)).product::<Complex64>().norm()
}

fn check_freq(freq: f64, fs: f64) -> Result<(), DspError> {
    if freq >= fs / 2.0 {
        return Err(DspError::FrequencyAboveNyquist { freq, nyquist: fs / 2.0 });
    }
    Ok(())
}

/// Digital Butterworth bandpass of prototype order `order` as biquads.
pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Vec<Sos>, DspError> {
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) || order == 0 {
        return Err(DspError::InvalidBand { lo, hi, fs });
    }
    let pi = std::f64::consts::PI;
    let fs2 = 2.0 * fs;
    let wl = fs2 * (pi * lo / fs).tan();
    let wh = fs2 * (pi * hi / fs).tan();
    let bw = wh - wl;
    let w0sq = wl * wh;

    // Analog lowpass prototype poles on the left half of the unit circle,
    // shifted to bandpass: s² − p·bw·s + w0² = 0.
    let mut poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = pi * (2 * k + 1 + order) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let a = p * bw / 2.0;
        let d = (a * a - w0sq).sqrt();
        poles.push(a + d);
        poles.push(a - d);
    }
    let mut gain = Complex64::new(bw.powi(order as i32) * fs2.powi(order as i32), 0.0);
    let zpoles: Vec<Complex64> = poles
        .iter()
        .map(|&p| {
            gain /= fs2 - p;
            (fs2 + p) / (fs2 - p)
        })
        .collect();

    // Pair conjugates; leftover real poles are paired in sorted order.
    let mut complex: Vec<Complex64> = zpoles.iter().copied().filter(|p| p.im > 1e-12).collect();
    complex.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    let mut real: Vec<f64> = zpoles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    real.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut sections = Vec::with_capacity(order);
    for p in complex {
        sections.push(Sos { b: [1.0, 0.0, -1.0], a: [1.0, -2.0 * p.re, p.norm_sqr()] });
    }
    for pair in real.chunks(2) {
        let (p1, p2) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push(Sos { b: [1.0, 0.0, -1.0], a: [1.0, -(p1 + p2), p1 * p2] });
    }
    let g = gain.re;
    for v in &mut sections[0].b {
        *v *= g;
    }
    Ok(sections)
}

/// Second-order IIR notch at `f0` with quality factor `q`.
pub fn iir_notch(f0: f64, q: f64, fs: f64) -> Result<Sos, DspError> {
    check_freq(f0, fs)?;
    if f0 <= 0.0 {
        return Err(DspError::InvalidBand { lo: f0, hi: f0, fs });
    }
    let pi = std::f64::consts::PI;
    let w0 = 2.0 * pi * f0 / fs;
    let bw = w0 / q;
    let beta = (bw / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    Ok(Sos { b: [gain, -2.0 * gain * c, gain], a: [1.0, -2.0 * gain * c, 2.0 * gain - 1.0] })
}

/// Steady-state section states for a unit step input (transposed direct form II).
pub fn sosfilt_zi(sos: &[Sos]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let dc = (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
            let z2 = s.b[2] - s.a[2] * dc;
            let z1 = s.b[1] - s.a[1] * dc + z2;
            let out = [z1 * scale, z2 * scale];
            scale *= dc;
            out
        })
        .collect()
}

/// Filters `x` through the cascade, updating `state` in place.
pub fn sosfilt(sos: &[Sos], x: &mut [f64], state: &mut [[f64; 2]]) {
    for (s, z) in sos.iter().zip(state.iter_mut()) {
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b[0] * xin + z[0];
            z[0] = s.b[1] * xin - s.a[1] * y + z[1];
            z[1] = s.b[2] * xin - s.a[2] * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering with odd-reflection padding of `pad` samples
/// and steady-state initial conditions.
pub fn filtfilt(sos: &[Sos], x: &[f64], pad: usize) -> Result<Vec<f64>, DspError> {
    let n = x.len();
    if n <= pad {
        return Err(DspError::SignalTooShort { len: n, needed: pad });
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let zi = sosfilt_zi(sos);
    let run = |buf: &mut Vec<f64>| {
        let x0 = buf[0];
        let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect();
        sosfilt(sos, buf, &mut state);
    };
    run(&mut ext);
    ext.reverse();
    run(&mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandpass_gain_shape() {
        let sos = butter_bandpass(3, 8.0, 40.0, 160.0).unwrap();
        assert_eq!(sos.len(), 3);
        // Butterworth: −3 dB at both edges, unity near the geometric centre.
        assert!((cascade_gain(&sos, 8.0, 160.0) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((cascade_gain(&sos, 40.0, 160.0) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((cascade_gain(&sos, 20.0, 160.0) - 1.0).abs() < 1e-3);
        assert!(cascade_gain(&sos, 0.2, 160.0) < 1e-4);
    }

    #[test]
    fn wide_band_has_real_poles() {
        let sos = butter_bandpass(3, 0.05, 79.5, 500.0).unwrap();
        assert_eq!(sos.len(), 3);
        assert!((cascade_gain(&sos, 0.05, 500.0) - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((cascade_gain(&sos, 79.5, 500.0) - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((cascade_gain(&sos, 10.0, 500.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn invalid_bands() {
        assert!(matches!(butter_bandpass(3, 40.0, 8.0, 160.0), Err(DspError::InvalidBand { .. })));
        assert!(matches!(butter_bandpass(3, 8.0, 8.0, 160.0), Err(DspError::InvalidBand { .. })));
        assert!(matches!(butter_bandpass(3, 8.0, 90.0, 160.0), Err(DspError::InvalidBand { .. })));
        assert!(matches!(butter_bandpass(3, 0.0, 10.0, 160.0), Err(DspError::InvalidBand { .. })));
    }

    #[test]
    fn notch_zero_at_centre() {
        let s = iir_notch(50.0, 30.0, 160.0).unwrap();
        assert!(cascade_gain(&[s], 50.0, 160.0) < 1e-12);
        assert!((cascade_gain(&[s], 10.0, 160.0) - 1.0).abs() < 1e-3);
        assert!(matches!(iir_notch(100.0, 30.0, 160.0), Err(DspError::FrequencyAboveNyquist { .. })));
    }

    #[test]
    fn zi_gives_flat_step_response() {
        let s = iir_notch(50.0, 30.0, 160.0).unwrap();
        let zi = sosfilt_zi(&[s]);
        let mut x = vec![1.0; 50];
        let mut st = zi.clone();
        sosfilt(&[s], &mut x, &mut st);
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn filtfilt_too_short() {
        let sos = butter_bandpass(3, 8.0, 40.0, 160.0).unwrap();
        assert!(matches!(filtfilt(&sos, &[0.0; 12], 12), Err(DspError::SignalTooShort { .. })));
        assert!(filtfilt(&sos, &[0.0; 13], 12).is_ok());
    }
}

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{butter_bandpass, filtfilt, padlen, DspError};
use crate::io::Trial;

/// A preprocessed model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `[E × T]`.
    pub samples: Array2<f64>,
    pub fs: f64,
    /// Index of the source trial in its table.
    pub trial: usize,
    /// Start offset within the trial, in samples.
    pub start: usize,
}

impl Window {
    pub fn start_seconds(&self) -> f64 {
        self.start as f64 / self.fs
    }

    pub fn center_seconds(&self) -> f64 {
        (self.start as f64 + self.samples.ncols() as f64 / 2.0) / self.fs
    }
}

const STD_EPS: f64 = 1e-8;

/// Per-electrode standardization (population std, `+1e-8`) followed by
/// common average referencing.
pub fn standardize_then_car(window: &mut Array2<f64>) {
    let t = window.ncols() as f64;
    for mut row in window.outer_iter_mut() {
        let mean = row.sum() / t;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
        let inv = 1.0 / (var.sqrt() + STD_EPS);
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    let car = window.mean_axis(ndarray::Axis(0)).expect("non-empty window");
    for mut row in window.outer_iter_mut() {
        row -= &car;
    }
}

/// Draws a window start (samples, relative to trial start) uniformly among
/// positions that keep the window inside the valid span.
pub fn sample_window<R: Rng + ?Sized>(trial: &Trial, window_len: usize, rng: &mut R) -> Result<usize, DspError> {
    let (v0, v1) = trial.valid;
    if v1 < v0 + window_len {
        return Err(DspError::TrialTooShort { valid: v1.saturating_sub(v0), window: window_len });
    }
    Ok(rng.random_range(v0..=v1 - window_len))
}

/// How a raw window becomes a model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowPreprocess {
    /// Zero-phase Butterworth band in Hz; `None` skips filtering.
    pub bandpass: Option<(f64, f64)>,
    pub order: usize,
    /// Filter the whole trial before cutting instead of the cut window.
    #[serde(default)]
    pub trial_level: bool,
}

impl Default for WindowPreprocess {
    fn default() -> Self {
        WindowPreprocess { bandpass: Some((8.0, 40.0)), order: 3, trial_level: false }
    }
}

/// Cuts `[start, start+len)` out of `trial` (`[E × L]`), filters and
/// standardizes it. With `trial_level` set, `trial` is expected to be
/// prefiltered already (see [`WindowPreprocess::filter_trial`]).
pub fn prepare_window(trial: &Array2<f64>, start: usize, len: usize, fs: f64, cfg: &WindowPreprocess) -> Result<Array2<f64>, DspError> {
    let mut w = trial.slice(s![.., start..start + len]).to_owned();
    if let (Some((lo, hi)), false) = (cfg.bandpass, cfg.trial_level) {
        let sos = butter_bandpass(cfg.order, lo, hi, fs)?;
        for mut row in w.outer_iter_mut() {
            let y = filtfilt(&sos, row.as_slice().expect("owned rows are contiguous"), padlen(cfg.order))?;
            row.assign(&ndarray::ArrayView1::from(&y));
        }
    }
    standardize_then_car(&mut w);
    Ok(w)
}

impl WindowPreprocess {
    /// Trial-level filtering, used when `trial_level` is set.
    pub fn filter_trial(&self, trial: &Array2<f64>, fs: f64) -> Result<Array2<f64>, DspError> {
        let mut out = trial.clone();
        if let (Some((lo, hi)), true) = (self.bandpass, self.trial_level) {
            let sos = butter_bandpass(self.order, lo, hi, fs)?;
            for mut row in out.outer_iter_mut() {
                let y = filtfilt(&sos, row.as_slice().expect("owned rows are contiguous"), padlen(self.order))?;
                row.assign(&ndarray::ArrayView1::from(&y));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    fn trial(len: usize, valid: (usize, usize)) -> Trial {
        Trial { recording: "r".into(), start: 0, length: len, subject_id: "s".into(), valid, condition: None }
    }

    #[test]
    fn constant_row_maps_to_zero_before_car() {
        let mut w = array![[3.0, 3.0, 3.0, 3.0], [1.0, 2.0, 3.0, 4.0]];
        standardize_then_car(&mut w);
        // Row 0 is zero pre-CAR, so the CAR mean is half of row 1.
        let z1: Vec<f64> = {
            let m = 2.5;
            let sd = (1.25f64).sqrt() + STD_EPS;
            [1.0, 2.0, 3.0, 4.0].iter().map(|v| (v - m) / sd).collect()
        };
        for t in 0..4 {
            assert!((w[[0, t]] + z1[t] / 2.0).abs() < 1e-12);
            assert!((w[[1, t]] - z1[t] / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn antisymmetric_pair_is_fixed_point() {
        let x = [-1.0, 1.0, -1.0, 1.0];
        let mut w = array![[x[0], x[1], x[2], x[3]], [-x[0], -x[1], -x[2], -x[3]]];
        let before = w.clone();
        standardize_then_car(&mut w);
        for (a, b) in w.iter().zip(before.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn sample_window_ranges() {
        let fs = 160.0;
        let mut rng = seeded(1);
        let full = trial(1520, (0, 1520));
        let padded = trial(1520, (0, 1120));
        for _ in 0..2000 {
            let s = sample_window(&full, 240, &mut rng).unwrap() as f64 / fs;
            assert!((0.0..=8.0).contains(&s));
            let s = sample_window(&padded, 240, &mut rng).unwrap() as f64 / fs;
            assert!((0.0..=5.5).contains(&s));
        }
        assert!(matches!(sample_window(&trial(100, (0, 100)), 240, &mut rng), Err(DspError::TrialTooShort { .. })));
    }

    #[test]
    fn sample_window_deterministic() {
        let t = trial(1520, (0, 1520));
        let a: Vec<usize> = {
            let mut r = seeded(7);
            (0..50).map(|_| sample_window(&t, 240, &mut r).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut r = seeded(7);
            (0..50).map(|_| sample_window(&t, 240, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}

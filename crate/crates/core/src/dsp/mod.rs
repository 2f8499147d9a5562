//! Deterministic preprocessing: IIR filtering (notch and zero-phase
//! Butterworth), FFT resampling, referencing and window handling.

mod fft;
mod iir;
mod resample;
mod window;

pub use fft::{rfft_freqs, RealFft};
pub use iir::{butter_bandpass, cascade_gain, filtfilt, iir_notch, sosfilt, sosfilt_zi, Sos};
pub use resample::{resample_fft, resample_fft_slice};
pub use window::{prepare_window, sample_window, standardize_then_car, Window, WindowPreprocess};

use ndarray::Array2;
use thiserror::Error;

use crate::io::RecordingBuffer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("frequency {freq} Hz is not below Nyquist ({nyquist} Hz)")]
    FrequencyAboveNyquist { freq: f64, nyquist: f64 },
    #[error("invalid band [{lo}, {hi}] Hz at fs={fs}")]
    InvalidBand { lo: f64, hi: f64, fs: f64 },
    #[error("signal of {len} samples too short, need more than {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("upsampling from {from} Hz to {to} Hz not supported")]
    UpsampleNotSupported { from: f64, to: f64 },
    #[error("trial valid span of {valid} samples shorter than window of {window}")]
    TrialTooShort { valid: usize, window: usize },
}

/// Edge padding used by the forward-backward filters: `3 × (order + 1)`.
pub fn padlen(order: usize) -> usize {
    3 * (order + 1)
}

fn map_rows(rec: &RecordingBuffer, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>, DspError>) -> Result<Array2<f32>, DspError> {
    let mut rows = Vec::with_capacity(rec.n_channels());
    for row in rec.samples.outer_iter() {
        let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        rows.push(f(&x)?);
    }
    let n = rows.first().map_or(0, Vec::len);
    Ok(Array2::from_shape_fn((rows.len(), n), |(c, t)| rows[c][t] as f32))
}

/// Zero-phase notch at each frequency (Q = 30).
pub fn notch(rec: &RecordingBuffer, freqs: &[f64]) -> Result<RecordingBuffer, DspError> {
    let sections = freqs.iter().map(|&f| iir_notch(f, 30.0, rec.fs)).collect::<Result<Vec<_>, _>>()?;
    let samples = map_rows(rec, |x| filtfilt(&sections, x, padlen(2)))?;
    Ok(RecordingBuffer { samples, ..rec.clone() })
}

/// Butterworth bandpass applied forward and backward.
pub fn butter_bandpass_zerophase(rec: &RecordingBuffer, lo: f64, hi: f64, order: usize) -> Result<RecordingBuffer, DspError> {
    let sos = butter_bandpass(order, lo, hi, rec.fs)?;
    let samples = map_rows(rec, |x| filtfilt(&sos, x, padlen(order)))?;
    Ok(RecordingBuffer { samples, ..rec.clone() })
}

/// Subtracts the across-channel mean at every timepoint.
pub fn common_average_reference(rec: &RecordingBuffer) -> RecordingBuffer {
    let mut out = rec.clone();
    let mean = rec.samples.mean_axis(ndarray::Axis(0)).expect("at least one channel");
    for mut row in out.samples.outer_iter_mut() {
        row -= &mean;
    }
    out.reference = "CAR".into();
    out
}

/// Subtracts one channel from all others (e.g. re-reference to P9).
pub fn rereference(rec: &RecordingBuffer, channel: &str) -> Result<RecordingBuffer, crate::io::MissingChannel> {
    let idx = rec.channel_index(channel).ok_or_else(|| crate::io::MissingChannel(channel.into()))?;
    let reference = rec.samples.row(idx).to_owned();
    let mut out = rec.clone();
    for mut row in out.samples.outer_iter_mut() {
        row -= &reference;
    }
    out.reference = channel.into();
    Ok(out)
}

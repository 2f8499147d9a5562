//! Recording ingestion and the neutral on-disk trial store.

mod edf;
mod labels;
mod store;

pub use edf::{read_edf, read_edf_with, EdfError, EdfFile, EdfHeader, EdfReadOptions, EdfSignalHeader};
pub use labels::{read_stage_labels, write_stage_labels, SleepStage, StageLabel};
pub use store::{
    assemble_store, read_store, read_tensor, write_store, write_tensor, DatasetEntry, DatasetManifest, RecordingEntry, Store, StoreError, TensorShape,
    FORMAT_VERSION,
};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

/// Multichannel signal with its sampling rate and channel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingBuffer {
    /// `[channels × timepoints]`.
    pub samples: Array2<f32>,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub subject_id: String,
    /// Reference label, `"CAR"` or `"unknown"`.
    pub reference: String,
    /// Source amplitude scale is unknown; values are not microvolts.
    pub unitless: bool,
}

impl RecordingBuffer {
    pub fn new(samples: Array2<f32>, fs: f64, channel_names: Vec<String>, subject_id: impl Into<String>) -> Self {
        RecordingBuffer { samples, fs, channel_names, subject_id: subject_id.into(), reference: "unknown".into(), unitless: false }
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    /// Checks the type invariants: label count, positive rate, finite samples.
    pub fn validate(&self) -> Result<(), String> {
        if self.channel_names.len() != self.n_channels() {
            return Err(format!("{} channel names for {} channels", self.channel_names.len(), self.n_channels()));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(format!("invalid sampling rate {}", self.fs));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err("non-finite sample".into());
        }
        Ok(())
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("channel {0:?} not present in recording")]
pub struct MissingChannel(pub String);

/// Reorders/subsets channels to exactly `names`.
pub fn select_channels<S: AsRef<str>>(rec: &RecordingBuffer, names: &[S]) -> Result<RecordingBuffer, MissingChannel> {
    let idx = names.iter().map(|n| rec.channel_index(n.as_ref()).ok_or_else(|| MissingChannel(n.as_ref().to_string()))).collect::<Result<Vec<_>, _>>()?;
    Ok(RecordingBuffer {
        samples: rec.samples.select(Axis(0), &idx),
        fs: rec.fs,
        channel_names: names.iter().map(|n| n.as_ref().to_string()).collect(),
        subject_id: rec.subject_id.clone(),
        reference: rec.reference.clone(),
        unitless: rec.unitless,
    })
}

/// One fixed-length segment of a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Name of the recording tensor in the store.
    pub recording: String,
    /// First sample of the trial in the recording.
    pub start: usize,
    /// Trial length in samples, including any virtual zero padding.
    pub length: usize,
    pub subject_id: String,
    /// `[start, end)` of the non-padded part, relative to `start`.
    pub valid: (usize, usize),
    /// Optional condition tag (e.g. `"ME"`, `"control"`, `"blink"`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

impl Trial {
    pub fn valid_len(&self) -> usize {
        self.valid.1 - self.valid.0
    }
}

/// Trials of one dataset. All share `trial_seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTable {
    pub dataset_id: String,
    pub trial_seconds: f64,
    pub trials: Vec<Trial>,
}

impl TrialTable {
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.trials.iter().map(|t| t.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

/// Copies a trial out of its recording as `f64`, zero-filling past the
/// recording end (virtual padding).
pub fn trial_samples(rec: &RecordingBuffer, trial: &Trial) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((rec.n_channels(), trial.length));
    let avail = rec.n_samples().saturating_sub(trial.start).min(trial.length);
    for (c, row) in rec.samples.outer_iter().enumerate() {
        for t in 0..avail {
            out[[c, t]] = row[trial.start + t] as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rec64() -> RecordingBuffer {
        let names: Vec<String> = (0..64).map(|i| format!("E{i}")).collect();
        let mut names = names;
        names[10] = "C3".into();
        names[20] = "C4".into();
        let samples = Array2::from_shape_fn((64, 5), |(c, t)| (c * 10 + t) as f32);
        RecordingBuffer::new(samples, 160.0, names, "s1")
    }

    #[test]
    fn select_two_in_requested_order() {
        let r = rec64();
        let s = select_channels(&r, &["C4", "C3"]).unwrap();
        assert_eq!(s.samples.dim(), (2, 5));
        assert_eq!(s.channel_names, vec!["C4", "C3"]);
        assert_eq!(s.samples[[0, 0]], 200.0);
        assert_eq!(s.samples[[1, 0]], 100.0);
    }

    #[test]
    fn select_missing_channel() {
        let r = rec64();
        assert_eq!(select_channels(&r, &["Cz"]).unwrap_err(), MissingChannel("Cz".into()));
    }

    #[test]
    fn select_full_set_is_identity() {
        let r = rec64();
        let s = select_channels(&r, &r.channel_names).unwrap();
        assert_eq!(s, r);
    }

    #[test]
    fn nested_selection_equals_single() {
        let r = rec64();
        let outer = select_channels(&r, &["E1", "C3", "E5", "C4"]).unwrap();
        let twice = select_channels(&outer, &["C4", "E1"]).unwrap();
        let once = select_channels(&r, &["C4", "E1"]).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn trial_samples_zero_pads_past_end() {
        let rec = RecordingBuffer::new(array![[1.0f32, 2.0, 3.0]], 1.0, vec!["a".into()], "s");
        let t = Trial { recording: "r".into(), start: 1, length: 4, subject_id: "s".into(), valid: (0, 2), condition: None };
        assert_eq!(trial_samples(&rec, &t), array![[2.0, 3.0, 0.0, 0.0]]);
    }
}

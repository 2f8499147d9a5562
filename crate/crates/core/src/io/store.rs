//! Neutral trial store: `manifest.json` plus one raw little-endian `f32`
//! tensor per recording (`<name>.f32`) with its `<name>.shape.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{RecordingBuffer, Trial, TrialTable};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch for tensor {0}")]
    ChecksumMismatch(String),
    #[error("trial references unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("trial references unknown recording {0:?}")]
    UnknownRecording(String),
    #[error("tensor {name}: {msg}")]
    BadTensor { name: String, msg: String },
    #[error("recording {0:?} has non-finite samples")]
    NonFinite(String),
    #[error("dataset {0:?} has trials with differing trial_seconds")]
    InconsistentTrialLength(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub dataset_id: String,
    pub electrodes: Vec<String>,
    pub fs: f64,
    pub trial_seconds: f64,
    /// Recording tensor names belonging to this dataset.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingEntry {
    pub name: String,
    pub dataset_id: String,
    pub subject_id: String,
    pub channel_names: Vec<String>,
    pub fs: f64,
    pub reference: String,
    pub unitless: bool,
    /// Hex SHA-256 of the raw tensor bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredTrial {
    pub dataset_id: String,
    #[serde(flatten)]
    pub trial: Trial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub datasets: Vec<DatasetEntry>,
    pub recordings: Vec<RecordingEntry>,
    pub trials: Vec<StoredTrial>,
    #[serde(default)]
    pub notes: Vec<String>,
    /// Excluded subjects/electrodes, recorded for provenance only.
    #[serde(default)]
    pub exclusions: Vec<String>,
}

impl DatasetManifest {
    pub fn dataset_ids(&self) -> Vec<String> {
        self.datasets.iter().map(|d| d.dataset_id.clone()).collect()
    }

    /// Electrodes present in every dataset, in the order of the first one.
    pub fn common_electrodes(&self) -> Vec<String> {
        let Some(first) = self.datasets.first() else {
            return Vec::new();
        };
        let sets: Vec<BTreeSet<&String>> = self.datasets.iter().map(|d| d.electrodes.iter().collect()).collect();
        first.electrodes.iter().filter(|e| sets.iter().all(|s| s.contains(e))).cloned().collect()
    }
}

/// A loaded store.
#[derive(Debug, Clone)]
pub struct Store {
    pub manifest: DatasetManifest,
    pub tables: Vec<TrialTable>,
    pub recordings: Vec<RecordingBuffer>,
}

impl Store {
    pub fn recording(&self, name: &str) -> Option<&RecordingBuffer> {
        let i = self.manifest.recordings.iter().position(|r| r.name == name)?;
        self.recordings.get(i)
    }

    pub fn table(&self, dataset_id: &str) -> Option<&TrialTable> {
        self.tables.iter().find(|t| t.dataset_id == dataset_id)
    }

    pub fn subject_ids(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.tables.iter().flat_map(|t| t.subjects()).collect();
        set.into_iter().collect()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn f32_bytes(data: impl Iterator<Item = f32>) -> Vec<u8> {
    data.flat_map(f32::to_le_bytes).collect()
}

/// Writes `<name>.f32` and `<name>.shape.json`; returns the payload checksum.
pub fn write_tensor(dir: &Path, name: &str, shape: &[usize], data: &[f32]) -> Result<String, StoreError> {
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(StoreError::BadTensor { name: name.into(), msg: format!("shape {shape:?} holds {n} values, got {}", data.len()) });
    }
    if let Some(parent) = dir.join(name).parent() {
        fs::create_dir_all(parent)?;
    }
    let bytes = f32_bytes(data.iter().copied());
    fs::write(dir.join(format!("{name}.f32")), &bytes)?;
    let meta = TensorShape { shape: shape.to_vec(), dtype: "f32".into() };
    fs::write(dir.join(format!("{name}.shape.json")), serde_json::to_vec_pretty(&meta)?)?;
    Ok(sha256_hex(&bytes))
}

/// Reads a tensor written by [`write_tensor`]; verifies `sha256` when given.
pub fn read_tensor(dir: &Path, name: &str, sha256: Option<&str>) -> Result<(Vec<usize>, Vec<f32>), StoreError> {
    let meta: TensorShape = serde_json::from_slice(&fs::read(dir.join(format!("{name}.shape.json")))?)?;
    if meta.dtype != "f32" {
        return Err(StoreError::BadTensor { name: name.into(), msg: format!("dtype {}", meta.dtype) });
    }
    let bytes = fs::read(dir.join(format!("{name}.f32")))?;
    if let Some(expected) = sha256 {
        if sha256_hex(&bytes) != expected {
            return Err(StoreError::ChecksumMismatch(name.into()));
        }
    }
    let n: usize = meta.shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(StoreError::BadTensor { name: name.into(), msg: format!("{} bytes for shape {:?}", bytes.len(), meta.shape) });
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((meta.shape, data))
}

/// Writes a store. `recordings[i]` is stored under `names[i]`; each trial's
/// `recording` field must be one of `names`.
pub fn write_store(
    dir: &Path,
    tables: &[TrialTable],
    names: &[String],
    recordings: &[RecordingBuffer],
    notes: Vec<String>,
) -> Result<DatasetManifest, StoreError> {
    check_parts(tables, names, recordings)?;
    fs::create_dir_all(dir)?;
    let mut shas = Vec::with_capacity(recordings.len());
    for (name, rec) in names.iter().zip(recordings) {
        let data: Vec<f32> = rec.samples.iter().copied().collect();
        shas.push(write_tensor(dir, name, &[rec.n_channels(), rec.n_samples()], &data)?);
    }
    let manifest = build_manifest(tables, names, recordings, shas, notes);
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// The store [`write_store`] would produce, without touching the disk.
pub fn assemble_store(tables: Vec<TrialTable>, names: &[String], recordings: Vec<RecordingBuffer>, notes: Vec<String>) -> Result<Store, StoreError> {
    check_parts(&tables, names, &recordings)?;
    let shas = recordings.iter().map(|r| sha256_hex(&f32_bytes(r.samples.iter().copied()))).collect();
    let manifest = build_manifest(&tables, names, &recordings, shas, notes);
    Ok(Store { manifest, tables, recordings })
}

fn check_parts(tables: &[TrialTable], names: &[String], recordings: &[RecordingBuffer]) -> Result<(), StoreError> {
    for t in tables {
        for tr in &t.trials {
            if !names.contains(&tr.recording) {
                return Err(StoreError::UnknownRecording(tr.recording.clone()));
            }
        }
    }
    for (name, rec) in names.iter().zip(recordings) {
        if rec.samples.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite(name.clone()));
        }
    }
    Ok(())
}

fn build_manifest(tables: &[TrialTable], names: &[String], recordings: &[RecordingBuffer], shas: Vec<String>, notes: Vec<String>) -> DatasetManifest {
    let mut rec_dataset: BTreeMap<&str, &str> = BTreeMap::new();
    for t in tables {
        for tr in &t.trials {
            rec_dataset.insert(tr.recording.as_str(), t.dataset_id.as_str());
        }
    }
    let entries: Vec<RecordingEntry> = names
        .iter()
        .zip(recordings)
        .zip(shas)
        .map(|((name, rec), sha)| RecordingEntry {
            name: name.clone(),
            dataset_id: rec_dataset.get(name.as_str()).map(|s| s.to_string()).unwrap_or_default(),
            subject_id: rec.subject_id.clone(),
            channel_names: rec.channel_names.clone(),
            fs: rec.fs,
            reference: rec.reference.clone(),
            unitless: rec.unitless,
            sha256: sha,
        })
        .collect();
    let datasets = tables
        .iter()
        .map(|t| {
            let mut files: Vec<String> = t.trials.iter().map(|tr| tr.recording.clone()).collect();
            files.sort();
            files.dedup();
            let first = entries.iter().find(|e| files.first() == Some(&e.name));
            DatasetEntry {
                dataset_id: t.dataset_id.clone(),
                electrodes: first.map(|e| e.channel_names.clone()).unwrap_or_default(),
                fs: first.map(|e| e.fs).unwrap_or(0.0),
                trial_seconds: t.trial_seconds,
                files,
            }
        })
        .collect();
    let trials = tables.iter().flat_map(|t| t.trials.iter().map(|tr| StoredTrial { dataset_id: t.dataset_id.clone(), trial: tr.clone() })).collect();
    DatasetManifest { format_version: FORMAT_VERSION, datasets, recordings: entries, trials, notes, exclusions: Vec::new() }
}

pub(crate) fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<(), StoreError> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn read_store(dir: &Path) -> Result<Store, StoreError> {
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let found = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found, expected: FORMAT_VERSION });
    }
    let manifest: DatasetManifest = serde_json::from_value(raw)?;

    let mut recordings = Vec::with_capacity(manifest.recordings.len());
    for e in &manifest.recordings {
        let (shape, data) = read_tensor(dir, &e.name, Some(&e.sha256))?;
        if shape.len() != 2 || shape[0] != e.channel_names.len() {
            return Err(StoreError::BadTensor { name: e.name.clone(), msg: format!("shape {shape:?}") });
        }
        let samples = Array2::from_shape_vec((shape[0], shape[1]), data).map_err(|err| StoreError::BadTensor { name: e.name.clone(), msg: err.to_string() })?;
        recordings.push(RecordingBuffer {
            samples,
            fs: e.fs,
            channel_names: e.channel_names.clone(),
            subject_id: e.subject_id.clone(),
            reference: e.reference.clone(),
            unitless: e.unitless,
        });
    }

    let mut tables: Vec<TrialTable> =
        manifest.datasets.iter().map(|d| TrialTable { dataset_id: d.dataset_id.clone(), trial_seconds: d.trial_seconds, trials: Vec::new() }).collect();
    for st in &manifest.trials {
        let table = tables.iter_mut().find(|t| t.dataset_id == st.dataset_id).ok_or_else(|| StoreError::UnknownDataset(st.dataset_id.clone()))?;
        if !manifest.recordings.iter().any(|r| r.name == st.trial.recording) {
            return Err(StoreError::UnknownRecording(st.trial.recording.clone()));
        }
        table.trials.push(st.trial.clone());
    }
    Ok(Store { manifest, tables, recordings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn small_store() -> (Vec<TrialTable>, Vec<String>, Vec<RecordingBuffer>) {
        let mut tables = Vec::new();
        let mut names = Vec::new();
        let mut recs = Vec::new();
        for d in 0..2 {
            let mut trials = Vec::new();
            for s in 0..3 {
                let name = format!("d{d}_s{s}");
                let samples = Array2::from_shape_fn((2, 50), |(c, t)| ((d * 7 + s * 3 + c) as f32).sin() * t as f32 * 0.1);
                let mut rec = RecordingBuffer::new(samples, 10.0, vec!["C3".into(), "C4".into()], format!("subj{d}{s}"));
                rec.unitless = d == 1;
                trials.push(Trial {
                    recording: name.clone(),
                    start: 0,
                    length: 50,
                    subject_id: rec.subject_id.clone(),
                    valid: (0, 40),
                    condition: Some("ME".into()),
                });
                names.push(name);
                recs.push(rec);
            }
            tables.push(TrialTable { dataset_id: format!("ds{d}"), trial_seconds: 5.0, trials });
        }
        (tables, names, recs)
    }

    #[test]
    fn round_trip_counts_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let (tables, names, recs) = small_store();
        write_store(dir.path(), &tables, &names, &recs, vec![]).unwrap();
        let store = read_store(dir.path()).unwrap();
        assert_eq!(store.manifest.dataset_ids().len(), 2);
        assert_eq!(store.subject_ids().len(), 6);
        assert_eq!(store.tables, tables);
        for (a, b) in store.recordings.iter().zip(&recs) {
            let bits_a: Vec<u32> = a.samples.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.samples.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn missing_dataset_entry_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (tables, names, recs) = small_store();
        let mut m = write_store(dir.path(), &tables, &names, &recs, vec![]).unwrap();
        m.datasets.retain(|d| d.dataset_id != "ds1");
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_store(dir.path()), Err(StoreError::UnknownDataset(id)) if id == "ds1"));
    }

    #[test]
    fn version_and_checksum_guards() {
        let dir = tempfile::tempdir().unwrap();
        let (tables, names, recs) = small_store();
        let mut m = write_store(dir.path(), &tables, &names, &recs, vec![]).unwrap();

        let path = dir.path().join("d0_s0.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[5] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_store(dir.path()), Err(StoreError::ChecksumMismatch(_))));

        m.format_version = 99;
        write_manifest(dir.path(), &m).unwrap();
        assert!(matches!(read_store(dir.path()), Err(StoreError::VersionMismatch { found: 99, .. })));
    }

    #[test]
    fn non_finite_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let (tables, names, mut recs) = small_store();
        recs[0].samples[[0, 0]] = f32::NAN;
        assert!(matches!(write_store(dir.path(), &tables, &names, &recs, vec![]), Err(StoreError::NonFinite(_))));
    }

    #[test]
    fn common_electrodes_intersection() {
        let m = DatasetManifest {
            format_version: 1,
            datasets: vec![
                DatasetEntry { dataset_id: "a".into(), electrodes: vec!["Fp1".into(), "C3".into(), "Cz".into()], fs: 1.0, trial_seconds: 1.0, files: vec![] },
                DatasetEntry { dataset_id: "b".into(), electrodes: vec!["Cz".into(), "C3".into()], fs: 1.0, trial_seconds: 1.0, files: vec![] },
            ],
            recordings: vec![],
            trials: vec![],
            notes: vec![],
            exclusions: vec![],
        };
        assert_eq!(m.common_electrodes(), vec!["C3", "Cz"]);
    }
}

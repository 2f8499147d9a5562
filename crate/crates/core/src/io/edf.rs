//! EDF / EDF+ reader.
//!
//! Layout: a 256-byte fixed header, then 256 bytes per signal (each field
//! stored column-wise across signals), then data records. Each record holds
//! `samples_per_record` little-endian `i16` values for every signal in turn.
//! Annotation signals (`EDF Annotations`) are dropped.

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use super::RecordingBuffer;
use crate::dsp;

const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("malformed EDF header: {0}")]
    MalformedHeader(String),
    #[error("signals disagree on sampling rate: {0:?} Hz")]
    MixedSamplingRates(Vec<f64>),
    #[error("data section truncated: expected {expected} bytes, found {found}")]
    TruncatedRecord { expected: usize, found: usize },
    #[error("no data signals in file")]
    NoSignals,
    #[error("resampling failed: {0}")]
    Resample(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub header_bytes: usize,
    pub reserved: String,
    pub n_records: usize,
    pub record_seconds: f64,
    pub n_signals: usize,
}

impl EdfHeader {
    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfSignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefilter: String,
    pub samples_per_record: usize,
}

impl EdfSignalHeader {
    pub fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    /// Linear digital→physical calibration.
    pub fn to_physical(&self, digital: i16) -> f64 {
        let scale = (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64;
        self.physical_min + (digital as f64 - self.digital_min as f64) * scale
    }
}

/// Parsed file: headers plus the digital payload per signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub signals: Vec<EdfSignalHeader>,
    /// Digital samples per signal, all records concatenated.
    pub digital: Vec<Vec<i16>>,
}

fn ascii_field(bytes: &[u8], what: &str) -> Result<String, EdfError> {
    if !bytes.iter().all(|b| (0x20..=0x7e).contains(b)) {
        return Err(EdfError::MalformedHeader(format!("{what}: non-printable bytes")));
    }
    Ok(String::from_utf8_lossy(bytes).trim().to_string())
}

fn int_field(bytes: &[u8], what: &str) -> Result<i64, EdfError> {
    let s = ascii_field(bytes, what)?;
    s.parse::<i64>().map_err(|_| EdfError::MalformedHeader(format!("{what}: {s:?} is not an integer")))
}

fn float_field(bytes: &[u8], what: &str) -> Result<f64, EdfError> {
    let s = ascii_field(bytes, what)?;
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| EdfError::MalformedHeader(format!("{what}: {s:?} is not a number")))
}

impl EdfFile {
    pub fn parse(bytes: &[u8]) -> Result<EdfFile, EdfError> {
        if bytes.len() < 256 {
            return Err(EdfError::MalformedHeader(format!("{} bytes, need 256", bytes.len())));
        }
        let version = ascii_field(&bytes[0..8], "version")?;
        if version != "0" {
            return Err(EdfError::MalformedHeader(format!("version field {version:?}, expected \"0\"")));
        }
        let n_signals = int_field(&bytes[252..256], "number of signals")?;
        if n_signals <= 0 {
            return Err(EdfError::MalformedHeader(format!("{n_signals} signals")));
        }
        let ns = n_signals as usize;
        let header_bytes = int_field(&bytes[184..192], "header bytes")?;
        if header_bytes != 256 * (ns as i64 + 1) {
            return Err(EdfError::MalformedHeader(format!("header size {header_bytes} does not match {ns} signals")));
        }
        let header_bytes = header_bytes as usize;
        if bytes.len() < header_bytes {
            return Err(EdfError::MalformedHeader(format!("file has {} bytes, header declares {header_bytes}", bytes.len())));
        }
        let n_records_raw = int_field(&bytes[236..244], "number of records")?;
        let record_seconds = float_field(&bytes[244..252], "record duration")?;
        if record_seconds <= 0.0 {
            return Err(EdfError::MalformedHeader(format!("record duration {record_seconds}")));
        }

        let sig = &bytes[256..header_bytes];
        // Field widths and the running offset of each column block.
        let widths = [16usize, 80, 8, 8, 8, 8, 8, 80, 8, 32];
        let mut offsets = [0usize; 10];
        for i in 1..10 {
            offsets[i] = offsets[i - 1] + widths[i - 1] * ns;
        }
        let field = |k: usize, s: usize| &sig[offsets[k] + s * widths[k]..offsets[k] + (s + 1) * widths[k]];

        let mut signals = Vec::with_capacity(ns);
        for s in 0..ns {
            let digital_min = int_field(field(5, s), "digital minimum")? as i32;
            let digital_max = int_field(field(6, s), "digital maximum")? as i32;
            let physical_min = float_field(field(3, s), "physical minimum")?;
            let physical_max = float_field(field(4, s), "physical maximum")?;
            if digital_max <= digital_min {
                return Err(EdfError::MalformedHeader(format!("signal {s}: digital range [{digital_min}, {digital_max}]")));
            }
            if physical_max == physical_min {
                return Err(EdfError::MalformedHeader(format!("signal {s}: empty physical range")));
            }
            let spr = int_field(field(8, s), "samples per record")?;
            if spr <= 0 {
                return Err(EdfError::MalformedHeader(format!("signal {s}: {spr} samples per record")));
            }
            signals.push(EdfSignalHeader {
                label: ascii_field(field(0, s), "label")?,
                transducer: ascii_field(field(1, s), "transducer")?,
                physical_dimension: ascii_field(field(2, s), "physical dimension")?,
                physical_min,
                physical_max,
                digital_min,
                digital_max,
                prefilter: ascii_field(field(7, s), "prefilter")?,
                samples_per_record: spr as usize,
            });
        }

        let record_len: usize = signals.iter().map(|s| s.samples_per_record * 2).sum();
        let data = &bytes[header_bytes..];
        let n_records = if n_records_raw < 0 {
            // -1: unknown at write time; derive from the payload size.
            if !data.len().is_multiple_of(record_len) {
                return Err(EdfError::TruncatedRecord { expected: (data.len() / record_len + 1) * record_len, found: data.len() });
            }
            data.len() / record_len
        } else {
            n_records_raw as usize
        };
        let expected = n_records * record_len;
        if data.len() < expected {
            return Err(EdfError::TruncatedRecord { expected, found: data.len() });
        }

        let mut digital: Vec<Vec<i16>> = signals.iter().map(|s| Vec::with_capacity(s.samples_per_record * n_records)).collect();
        let mut pos = 0;
        for _ in 0..n_records {
            for (s, sh) in signals.iter().enumerate() {
                for _ in 0..sh.samples_per_record {
                    digital[s].push(i16::from_le_bytes([data[pos], data[pos + 1]]));
                    pos += 2;
                }
            }
        }

        let header = EdfHeader {
            version,
            patient: ascii_field(&bytes[8..88], "patient")?,
            recording: ascii_field(&bytes[88..168], "recording")?,
            start_date: ascii_field(&bytes[168..176], "start date")?,
            start_time: ascii_field(&bytes[176..184], "start time")?,
            header_bytes,
            reserved: ascii_field(&bytes[192..236], "reserved")?,
            n_records,
            record_seconds,
            n_signals: ns,
        };
        Ok(EdfFile { header, signals, digital })
    }

    /// Re-serializes the data records from the digital samples.
    pub fn encode_records(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in 0..self.header.n_records {
            for (s, sh) in self.signals.iter().enumerate() {
                let n = sh.samples_per_record;
                for v in &self.digital[s][r * n..(r + 1) * n] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn sampling_rate(&self, signal: usize) -> f64 {
        self.signals[signal].samples_per_record as f64 / self.header.record_seconds
    }

    /// Physical samples of one signal.
    pub fn physical(&self, signal: usize) -> Vec<f64> {
        let sh = &self.signals[signal];
        self.digital[signal].iter().map(|&d| sh.to_physical(d)).collect()
    }

    pub fn subject_id(&self) -> String {
        // EDF+ patient field: "code sex birthdate name"; plain EDF is free text.
        self.header.patient.split_whitespace().next().unwrap_or("unknown").to_string()
    }

    /// Converts data signals to a single-rate buffer.
    pub fn to_recording(&self, opts: &EdfReadOptions) -> Result<RecordingBuffer, EdfError> {
        let data_idx: Vec<usize> = (0..self.signals.len()).filter(|&s| !self.signals[s].is_annotation()).collect();
        if data_idx.is_empty() {
            return Err(EdfError::NoSignals);
        }
        let rates: Vec<f64> = data_idx.iter().map(|&s| self.sampling_rate(s)).collect();
        let mixed = rates.iter().any(|&r| r != rates[0]);
        let fs = match (mixed, opts.resample_to) {
            (false, None) => rates[0],
            (_, Some(target)) => target,
            (true, None) => return Err(EdfError::MixedSamplingRates(rates)),
        };
        let mut rows = Vec::with_capacity(data_idx.len());
        for (&s, &rate) in data_idx.iter().zip(&rates) {
            let phys = self.physical(s);
            let row = if rate == fs { phys } else { dsp::resample_fft_slice(&phys, rate, fs).map_err(|e| EdfError::Resample(e.to_string()))? };
            rows.push(row);
        }
        let n = rows.iter().map(Vec::len).min().unwrap_or(0);
        let samples = Array2::from_shape_fn((rows.len(), n), |(c, t)| rows[c][t] as f32);
        let names = data_idx.iter().map(|&s| self.signals[s].label.clone()).collect();
        Ok(RecordingBuffer::new(samples, fs, names, self.subject_id()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct EdfReadOptions {
    /// Resample every data signal to this rate (downsampling only).
    pub resample_to: Option<f64>,
}

pub fn read_edf(path: impl AsRef<Path>) -> Result<RecordingBuffer, EdfError> {
    read_edf_with(path, &EdfReadOptions::default())
}

pub fn read_edf_with(path: impl AsRef<Path>, opts: &EdfReadOptions) -> Result<RecordingBuffer, EdfError> {
    let bytes = std::fs::read(path)?;
    EdfFile::parse(&bytes)?.to_recording(opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_of_digital_zero() {
        let sh = EdfSignalHeader {
            label: "Fp1".into(),
            transducer: String::new(),
            physical_dimension: "uV".into(),
            physical_min: -200.0,
            physical_max: 200.0,
            digital_min: -32768,
            digital_max: 32767,
            prefilter: String::new(),
            samples_per_record: 1,
        };
        // -200 + 32768 * 400 / 65535
        let expected = -200.0 + 32768.0 * 400.0 / 65535.0;
        assert!((sh.to_physical(0) - expected).abs() < 1e-12);
        assert!((sh.to_physical(0) - 0.0031).abs() < 1e-4);
        assert_eq!(sh.to_physical(-32768), -200.0);
        assert_eq!(sh.to_physical(32767), 200.0);
    }

    #[test]
    fn short_buffer_rejected() {
        assert!(matches!(EdfFile::parse(&[b' '; 100]), Err(EdfError::MalformedHeader(_))));
    }
}

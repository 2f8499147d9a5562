//! Writes small EDF/EDF+ files for tests. The library only reads EDF.

pub struct FixtureSignal {
    pub label: String,
    pub physical: (f64, f64),
    pub digital: (i32, i32),
    pub samples_per_record: usize,
    /// All records concatenated.
    pub samples: Vec<i16>,
}

pub struct Fixture {
    pub patient: String,
    pub reserved: String,
    pub record_seconds: f64,
    pub n_records: usize,
    /// Written as -1 in the header when set.
    pub unknown_record_count: bool,
    pub signals: Vec<FixtureSignal>,
}

fn field(out: &mut Vec<u8>, s: &str, width: usize) {
    let mut b = s.as_bytes().to_vec();
    assert!(b.len() <= width, "{s:?} wider than {width}");
    b.resize(width, b' ');
    out.extend_from_slice(&b);
}

impl Fixture {
    /// `n_signals` EEG channels at `spr` samples per 1 s record, filled
    /// with a deterministic sawtooth spanning the digital range.
    pub fn eeg(n_signals: usize, spr: usize, n_records: usize) -> Self {
        let signals = (0..n_signals)
            .map(|s| FixtureSignal {
                label: format!("EEG{s}"),
                physical: (-200.0, 200.0),
                digital: (-32768, 32767),
                samples_per_record: spr,
                samples: (0..spr * n_records).map(|i| ((i * 7919 + s * 104729) % 65536) as u16 as i16).collect(),
            })
            .collect();
        Fixture { patient: "subj01 X X X".into(), reserved: String::new(), record_seconds: 1.0, n_records, unknown_record_count: false, signals }
    }

    /// Appends an `EDF Annotations` signal and marks the file EDF+.
    pub fn with_annotations(mut self) -> Self {
        let spr = 30;
        let mut tal = b"+0\x14\x14\x00".to_vec();
        tal.resize(spr * 2, 0);
        let record: Vec<i16> = tal.chunks(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
        self.signals.push(FixtureSignal {
            label: "EDF Annotations".into(),
            physical: (-1.0, 1.0),
            digital: (-32768, 32767),
            samples_per_record: spr,
            samples: (0..self.n_records).flat_map(|_| record.clone()).collect(),
        });
        self.reserved = "EDF+C".into();
        self
    }

    pub fn header(&self) -> Vec<u8> {
        let ns = self.signals.len();
        let mut h = Vec::with_capacity(256 * (ns + 1));
        field(&mut h, "0", 8);
        field(&mut h, &self.patient, 80);
        field(&mut h, "Startdate X X X X", 80);
        field(&mut h, "01.01.20", 8);
        field(&mut h, "00.00.00", 8);
        field(&mut h, &(256 * (ns + 1)).to_string(), 8);
        field(&mut h, &self.reserved, 44);
        field(&mut h, &if self.unknown_record_count { "-1".to_string() } else { self.n_records.to_string() }, 8);
        field(&mut h, &format!("{}", self.record_seconds), 8);
        field(&mut h, &ns.to_string(), 4);
        let cols: [(usize, Box<dyn Fn(&FixtureSignal) -> String>); 10] = [
            (16, Box::new(|s| s.label.clone())),
            (80, Box::new(|_| "AgAgCl".into())),
            (8, Box::new(|_| "uV".into())),
            (8, Box::new(|s| format!("{}", s.physical.0))),
            (8, Box::new(|s| format!("{}", s.physical.1))),
            (8, Box::new(|s| s.digital.0.to_string())),
            (8, Box::new(|s| s.digital.1.to_string())),
            (80, Box::new(|_| "HP:0.1Hz".into())),
            (8, Box::new(|s| s.samples_per_record.to_string())),
            (32, Box::new(|_| String::new())),
        ];
        for (w, f) in &cols {
            for s in &self.signals {
                field(&mut h, &f(s), *w);
            }
        }
        h
    }

    pub fn records(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in 0..self.n_records {
            for s in &self.signals {
                let n = s.samples_per_record;
                for v in &s.samples[r * n..(r + 1) * n] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn bytes(&self) -> Vec<u8> {
        let mut b = self.header();
        b.extend(self.records());
        b
    }
}

/// Header byte offsets of selected fixed fields.
pub mod offsets {
    pub const VERSION: usize = 0;
    pub const HEADER_BYTES: usize = 184;
    pub const N_RECORDS: usize = 236;
    pub const RECORD_SECONDS: usize = 244;
    pub const N_SIGNALS: usize = 252;
}

/// Overwrites a fixed-width field in place.
pub fn patch(bytes: &mut [u8], at: usize, width: usize, value: &str) {
    let mut v = value.as_bytes().to_vec();
    v.resize(width, b' ');
    bytes[at..at + width].copy_from_slice(&v);
}

/// Variants of a valid file that a parser must reject.
pub fn malformed_variants(valid: &[u8], n_signals: usize) -> Vec<(&'static str, Vec<u8>)> {
    use offsets::*;
    let sig = 256;
    // Digital-max column of signal 0: after label, transducer, dimension,
    // physical min/max and digital min.
    let dmax = sig + (16 + 80 + 8 + 8 + 8 + 8) * n_signals;
    let spr = sig + (16 + 80 + 8 + 8 + 8 + 8 + 8 + 80) * n_signals;
    let mut out = Vec::new();
    let mut v = |name, f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = valid.to_vec();
        f(&mut b);
        out.push((name, b));
    };
    v("too short", &|b| b.truncate(200));
    v("bad version", &|b| patch(b, VERSION, 8, "1"));
    v("non-numeric signal count", &|b| patch(b, N_SIGNALS, 4, "ab"));
    v("zero signals", &|b| patch(b, N_SIGNALS, 4, "0"));
    v("header size mismatch", &|b| patch(b, HEADER_BYTES, 8, "1000"));
    v("non-numeric record count", &|b| patch(b, N_RECORDS, 8, "many"));
    v("zero record duration", &|b| patch(b, RECORD_SECONDS, 8, "0"));
    v("inverted digital range", &|b| patch(b, dmax, 8, "-32768"));
    v("zero samples per record", &|b| patch(b, spr, 8, "0"));
    v("non-printable byte", &|b| b[10] = 0x01);
    v("truncated records", &|b| {
        let n = b.len();
        b.truncate(n - 3)
    });
    out
}

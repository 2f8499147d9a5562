mod analysis;
mod data;
mod probes;

pub use analysis::{consistency, interpret};
pub use data::{pretrain, synth};
pub use probes::{blinkprobe, downstream, fewshot};

use std::path::Path;

use anyhow::Result;

pub(crate) fn f6(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes `header` then `rows` as CSV.
pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

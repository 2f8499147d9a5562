//! Sleep-stage sidecar CSV: `epoch_index,stage`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SleepStage {
    W,
    REM,
    N1,
    N2,
    N3,
}

impl SleepStage {
    pub const ALL: [SleepStage; 5] = [SleepStage::W, SleepStage::REM, SleepStage::N1, SleepStage::N2, SleepStage::N3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<SleepStage> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SleepStage::W => "W",
            SleepStage::REM => "REM",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
        };
        f.write_str(s)
    }
}

impl FromStr for SleepStage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "W" => Ok(SleepStage::W),
            "REM" | "R" => Ok(SleepStage::REM),
            "N1" => Ok(SleepStage::N1),
            "N2" => Ok(SleepStage::N2),
            "N3" => Ok(SleepStage::N3),
            other => Err(format!("unknown sleep stage {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLabel {
    pub epoch_index: usize,
    pub stage: SleepStage,
}

#[derive(Deserialize, Serialize)]
struct Row {
    epoch_index: usize,
    stage: String,
}

pub fn read_stage_labels(path: &Path) -> Result<Vec<StageLabel>, StoreError> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(csv_err)?;
        let stage = row.stage.parse().map_err(|e: String| StoreError::BadTensor { name: path.display().to_string(), msg: e })?;
        out.push(StageLabel { epoch_index: row.epoch_index, stage });
    }
    Ok(out)
}

pub fn write_stage_labels(path: &Path, labels: &[StageLabel]) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for l in labels {
        w.serialize(Row { epoch_index: l.epoch_index, stage: l.stage.to_string() }).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> StoreError {
    StoreError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stages.csv");
        let labels: Vec<StageLabel> = SleepStage::ALL.iter().enumerate().map(|(i, &stage)| StageLabel { epoch_index: i, stage }).collect();
        write_stage_labels(&p, &labels).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch_index,stage\n0,W\n1,REM\n"));
        assert_eq!(read_stage_labels(&p).unwrap(), labels);
    }
}

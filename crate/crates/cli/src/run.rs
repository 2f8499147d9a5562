use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use eegd3::io::{read_stage_labels, read_store, SleepStage, Store};
use eegd3::training::{split_folds, Checkpoint, FoldSplit};

use crate::config::RunConfig;

/// Resolved inputs of one command invocation.
pub struct Run {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub fold: Option<usize>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    fold: Option<usize>,
    git_revision: String,
    config: &'a RunConfig,
    inputs: &'a BTreeMap<String, String>,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

impl Run {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `run.json`; `inputs` lists the files the command read.
    pub fn record(&self, inputs: &BTreeMap<String, String>) -> Result<()> {
        let rec = RunRecord {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: config_hash(&self.cfg),
            seed: self.cfg.seed,
            fold: self.fold,
            git_revision: git_revision(),
            config: &self.cfg,
            inputs,
        };
        std::fs::write(self.path("run.json"), serde_json::to_string_pretty(&rec)? + "\n")?;
        Ok(())
    }

    pub fn store(&self) -> Result<(PathBuf, Store)> {
        let dir = self.cfg.store_dir()?;
        let store = read_store(&dir).with_context(|| format!("reading store {}", dir.display()))?;
        Ok((dir, store))
    }

    pub fn electrodes(&self, store: &Store) -> Vec<String> {
        self.cfg.io.electrodes.clone().unwrap_or_else(|| store.manifest.common_electrodes())
    }

    pub fn split(&self, store: &Store) -> Result<FoldSplit> {
        Ok(split_folds(&store.subject_ids(), self.cfg.training.folds, self.cfg.seed)?)
    }

    /// Folds to process: `--fold` or all of them.
    pub fn folds(&self, k: usize) -> Result<Vec<usize>> {
        match self.fold {
            Some(f) if f >= k => bail!("fold {f} out of range for {k} folds"),
            Some(f) => Ok(vec![f]),
            None => Ok((0..k).collect()),
        }
    }
}

pub fn fold_dir(root: &Path, fold: usize) -> PathBuf {
    root.join(format!("fold{fold}"))
}

/// Checkpoints under `root/fold*`, for the requested fold or all present.
pub fn load_checkpoints(root: &Path, fold: Option<usize>) -> Result<Vec<(usize, Checkpoint)>> {
    let mut folds: Vec<usize> = match fold {
        Some(f) => vec![f],
        None => std::fs::read_dir(root)
            .with_context(|| format!("listing checkpoints in {}", root.display()))?
            .filter_map(|e| e.ok()?.file_name().to_str()?.strip_prefix("fold")?.parse().ok())
            .collect(),
    };
    folds.sort();
    if folds.is_empty() {
        bail!("no fold checkpoints under {}", root.display());
    }
    folds
        .into_iter()
        .map(|f| {
            let dir = fold_dir(root, f);
            Checkpoint::load(&dir).with_context(|| format!("loading {}", dir.display())).map(|c| (f, c))
        })
        .collect()
}

/// Stage sequences from `store/labels/<recording>.csv`.
pub fn load_stage_labels(store_dir: &Path) -> Result<BTreeMap<String, Vec<SleepStage>>> {
    let dir = store_dir.join("labels");
    let mut out = BTreeMap::new();
    let mut entries: Vec<PathBuf> =
        std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for path in entries.into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
        let name = path.file_stem().and_then(|s| s.to_str()).context("label file name")?.to_string();
        let mut rows = read_stage_labels(&path)?;
        rows.sort_by_key(|r| r.epoch_index);
        if rows.iter().enumerate().any(|(i, r)| r.epoch_index != i) {
            bail!("{} has gaps in its epoch indices", path.display());
        }
        out.insert(name, rows.into_iter().map(|r| r.stage).collect());
    }
    Ok(out)
}

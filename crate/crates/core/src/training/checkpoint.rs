use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::io::{read_tensor, write_tensor};
use crate::model::{ModelConfig, ModelParams, Network};
use crate::sequencing::SequenceMappingSet;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub bin_accuracy: f64,
}

/// A pretrained decomposer with its mappings, configs and loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Electrode order of the model input.
    pub electrodes: Vec<String>,
    pub params: ModelParams,
    pub mappings: SequenceMappingSet,
    pub loss_curve: Vec<EpochStats>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    electrodes: Vec<String>,
    mapping_datasets: Vec<String>,
    mapping_gamma: f64,
    tensors: Vec<TensorEntry>,
    loss_curve: Vec<EpochStats>,
    metadata: BTreeMap<String, String>,
}

/// Expected shape of every parameter tensor, in serialization order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    let (c, d, e) = (cfg.n_components, cfg.spatial_filters, cfg.n_electrodes);
    let (k1, k2, k3) = (cfg.k1(), cfg.k2(), cfg.k3());
    vec![
        ("filter", vec![c, 3]),
        ("spatial", vec![k1, e]),
        ("bn1.gamma", vec![k1]),
        ("bn1.beta", vec![k1]),
        ("depth1", vec![k1, cfg.kernel1]),
        ("point1", vec![k2, d]),
        ("bn2.gamma", vec![k2]),
        ("bn2.beta", vec![k2]),
        ("depth2", vec![k2, cfg.kernel2]),
        ("point2", vec![k3, d * cfg.f1]),
        ("bn3.gamma", vec![k3]),
        ("bn3.beta", vec![k3]),
        ("reduce_w", vec![c, d * cfg.f1 * cfg.f2]),
        ("reduce_b", vec![c]),
        ("bn1.running_mean", vec![k1]),
        ("bn1.running_var", vec![k1]),
        ("bn2.running_mean", vec![k2]),
        ("bn2.running_var", vec![k2]),
        ("bn3.running_mean", vec![k3]),
        ("bn3.running_var", vec![k3]),
    ]
}

fn to_f32(x: &[f64]) -> Vec<f32> {
    x.iter().map(|&v| v as f32).collect()
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network, TrainError> {
        Ok(Network::new(self.model_config.clone())?)
    }

    /// Rounds every tensor to `f32`, the on-disk precision, so a saved and
    /// reloaded checkpoint evaluates identically to this one.
    pub fn round_to_f32(&mut self) {
        for (_, t) in self.params.all_tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        for v in self.mappings.raw.values_mut() {
            v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;
        let tdir = dir.join("tensors");
        let mut tensors = Vec::new();
        let shapes = param_shapes(&self.model_config);
        for ((name, data), (sname, shape)) in self.params.all_tensors().into_iter().zip(&shapes) {
            debug_assert_eq!(name, *sname);
            let sha256 = write_tensor(&tdir, name, shape, &to_f32(data))?;
            tensors.push(TensorEntry { name: name.into(), shape: shape.clone(), dtype: "f32".into(), sha256 });
        }
        let ids = self.mappings.dataset_ids();
        for (i, id) in ids.iter().enumerate() {
            let name = format!("mapping.{i}");
            let shape = vec![self.mappings.n_bins, self.mappings.n_components];
            let sha256 = write_tensor(&tdir, &name, &shape, &to_f32(&self.mappings.raw[id]))?;
            tensors.push(TensorEntry { name, shape, dtype: "f32".into(), sha256 });
        }
        let file = ParamsFile {
            version: CHECKPOINT_VERSION,
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            electrodes: self.electrodes.clone(),
            mapping_datasets: ids,
            mapping_gamma: self.mappings.gamma,
            tensors,
            loss_curve: self.loss_curve.clone(),
            metadata: self.metadata.clone(),
        };
        fs::write(dir.join("params.json"), serde_json::to_vec_pretty(&file)?)?;
        self.write_loss_curve(&dir.join("loss_curve.csv"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let file: ParamsFile = serde_json::from_slice(&fs::read(dir.join("params.json"))?)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!("version {} (expected {CHECKPOINT_VERSION})", file.version)));
        }
        let cfg = file.model_config;
        cfg.validate()?;
        let entries: BTreeMap<&str, &TensorEntry> = file.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let tdir = dir.join("tensors");
        let load = |name: &str, shape: &[usize]| -> Result<Vec<f64>, TrainError> {
            let entry = entries.get(name).ok_or_else(|| TrainError::Checkpoint(format!("missing tensor {name}")))?;
            if entry.shape != shape || entry.dtype != "f32" {
                return Err(TrainError::Checkpoint(format!("tensor {name}: table says {:?}/{}, model needs {shape:?}/f32", entry.shape, entry.dtype)));
            }
            let (disk_shape, data) = read_tensor(&tdir, name, Some(&entry.sha256))?;
            if disk_shape != shape {
                return Err(TrainError::Checkpoint(format!("tensor {name}: file shape {disk_shape:?}, expected {shape:?}")));
            }
            Ok(data.into_iter().map(f64::from).collect())
        };
        let mut params = ModelParams::zeros(&cfg);
        let shapes = param_shapes(&cfg);
        for ((name, slot), (_, shape)) in params.all_tensors_mut().into_iter().zip(&shapes) {
            *slot = load(name, shape)?;
        }
        let mut raw = BTreeMap::new();
        let y = file.train_config.n_bins;
        for (i, id) in file.mapping_datasets.iter().enumerate() {
            raw.insert(id.clone(), load(&format!("mapping.{i}"), &[y, cfg.n_components])?);
        }
        let mappings = SequenceMappingSet { gamma: file.mapping_gamma, n_bins: y, n_components: cfg.n_components, raw };
        Ok(Checkpoint {
            model_config: cfg,
            train_config: file.train_config,
            electrodes: file.electrodes,
            params,
            mappings,
            loss_curve: file.loss_curve,
            metadata: file.metadata,
        })
    }

    /// `epoch,mean_loss,bin_accuracy`.
    pub fn write_loss_curve(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        for s in &self.loss_curve {
            w.serialize(s).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small() -> Checkpoint {
        let mut cfg = ModelConfig::motor(4, 3);
        cfg.n_times = 64;
        cfg.kernel1 = 9;
        cfg.kernel2 = 5;
        cfg.fs = 64.0;
        let params = ModelParams::init(&cfg, &mut seeded(1));
        let mappings = SequenceMappingSet::init(&["a", "b"], 16, 3, 0.5, &mut seeded(2));
        let mut ck = Checkpoint {
            model_config: cfg,
            train_config: TrainConfig::motor(3),
            electrodes: (0..4).map(|i| format!("E{i}")).collect(),
            params,
            mappings,
            loss_curve: vec![EpochStats { epoch: 1, mean_loss: 0.5, bin_accuracy: 0.1 }],
            metadata: BTreeMap::new(),
        };
        ck.round_to_f32();
        ck
    }

    #[test]
    fn round_trip_is_exact_after_rounding() {
        let ck = small();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
        let csv = fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "epoch,mean_loss,bin_accuracy");
    }

    #[test]
    fn shape_table_validated() {
        let ck = small();
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let p = dir.path().join("params.json");
        let text = fs::read_to_string(&p).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["model_config"]["n_components"] = 4.into();
        fs::write(&p, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(TrainError::Checkpoint(_))));
    }
}

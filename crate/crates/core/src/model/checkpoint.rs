//! Checkpoint directory: `manifest.toml`, `adj.csv`, and three tensor files
//! per parameter (value and both Adam moments).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DwafmModel;
use crate::config::ModelConfig;
use crate::data::{read_tensor_file, write_tensor_file, NormStats, PredefinedGraph, ADJ_FILE};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub step_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    /// `f32` or `f64`.
    pub dtype: String,
    pub seed: u64,
    /// Completed training epochs.
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_val_mae: Option<f64>,
    pub stats: NormStats,
    pub model: ModelConfig,
    pub params: Vec<ParamEntry>,
}

impl Manifest {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if m.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {}",
                m.format_version
            )));
        }
        m.model.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml_str(&s)
    }
}

fn value_file(name: &str) -> String {
    format!("{name}.dwaf")
}

fn moment_file(name: &str, which: &str) -> String {
    format!("{name}.{which}.dwaf")
}

impl<F: Real> DwafmModel<F> {
    pub fn save_checkpoint(&self, dir: &Path, seed: u64, epoch: usize, best_val_mae: Option<f64>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            format_version: CHECKPOINT_FORMAT,
            dtype: F::NAME.to_string(),
            seed,
            epoch,
            best_val_mae,
            stats: self.stats,
            model: self.config.clone(),
            params: self
                .store
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    step_count: p.step_count,
                })
                .collect(),
        };
        for p in self.store.iter() {
            write_tensor_file(&dir.join(value_file(&p.name)), &p.value)?;
            write_tensor_file(&dir.join(moment_file(&p.name, "adam_m")), &p.adam_m)?;
            write_tensor_file(&dir.join(moment_file(&p.name, "adam_v")), &p.adam_v)?;
        }
        let adj = dir.join(ADJ_FILE);
        std::fs::write(&adj, self.graph.to_csv()).map_err(|e| Error::io(&adj, e))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, manifest.to_toml_string()).map_err(|e| Error::io(&path, e))
    }

    /// Rebuilds the model described by the manifest in `dir` and restores
    /// every parameter with its optimizer state.
    pub fn load_checkpoint(dir: &Path) -> Result<(Self, Manifest)> {
        let manifest = Manifest::load(dir)?;
        if manifest.dtype != F::NAME {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, expected {}",
                manifest.dtype,
                F::NAME
            )));
        }
        let graph = PredefinedGraph::load(&dir.join(ADJ_FILE), manifest.model.n_nodes)?;
        let mut model = Self::new(manifest.model.clone(), &graph, manifest.stats, manifest.seed)?;
        if manifest.params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "manifest lists {} parameters, model has {}",
                manifest.params.len(),
                model.store.len()
            )));
        }
        for (entry, p) in manifest.params.iter().zip(model.store.iter_mut()) {
            if entry.name != p.name || entry.shape != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match model parameter {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let read = |file: String| -> Result<Tensor<F>> {
                let t = read_tensor_file::<F>(&dir.join(&file))?;
                if t.shape() != entry.shape.as_slice() {
                    return Err(Error::Checkpoint(format!("{file} has shape {:?}", t.shape())));
                }
                Ok(t)
            };
            p.value = read(value_file(&entry.name))?;
            p.adam_m = read(moment_file(&entry.name, "adam_m"))?;
            p.adam_v = read(moment_file(&entry.name, "adam_v"))?;
            p.step_count = entry.step_count;
            p.zero_grad();
        }
        Ok((model, manifest))
    }
}

use std::path::{Path, PathBuf};

use super::format::{read_tensor_file, write_tensor_file};
use super::graph::PredefinedGraph;
use super::meta::SeriesMeta;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DATA_FILE: &str = "data.dwaf";
pub const META_FILE: &str = "data.json";
pub const ADJ_FILE: &str = "adj.csv";

/// A multivariate traffic recording: `values` is `[L, N, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub values: Tensor<f32>,
    pub meta: SeriesMeta,
}

/// Path of the JSON sidecar that accompanies a data file.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

impl RawSeries {
    /// Accepts `[L, N]` (single channel) or `[L, N, C]` values.
    pub fn new(values: Tensor<f32>, meta: SeriesMeta) -> Result<Self> {
        meta.validate()?;
        let values = match values.ndim() {
            2 => {
                let (l, n) = (values.shape()[0], values.shape()[1]);
                values.reshape(&[l, n, 1])?
            }
            3 => values,
            _ => {
                return Err(Error::InvalidShape(format!(
                    "series must be [L, N] or [L, N, C], got {:?}",
                    values.shape()
                )))
            }
        };
        if values.shape()[1] != meta.num_nodes {
            return Err(Error::Metadata(format!(
                "metadata declares {} nodes but the data has {}",
                meta.num_nodes,
                values.shape()[1]
            )));
        }
        if !meta.channel_names.is_empty() && meta.channel_names.len() != values.shape()[2] {
            return Err(Error::Metadata(format!(
                "{} channel names for {} channels",
                meta.channel_names.len(),
                values.shape()[2]
            )));
        }
        Ok(RawSeries { values, meta })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn n_channels(&self) -> usize {
        self.values.shape()[2]
    }

    /// One channel as a flat `[L * N]` row-major buffer.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        let ch = self.n_channels();
        self.values.data().iter().skip(c).step_by(ch).copied().collect()
    }

    /// Reads a data file and its sidecar metadata.
    pub fn load(data_path: &Path) -> Result<Self> {
        let values = read_tensor_file::<f32>(data_path)?;
        let meta_path = sidecar_path(data_path);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        Self::new(values, SeriesMeta::from_json_str(&text)?)
    }

    pub fn save(&self, data_path: &Path) -> Result<()> {
        write_tensor_file(data_path, &self.values)?;
        let meta_path = sidecar_path(data_path);
        std::fs::write(&meta_path, self.meta.to_json_string()).map_err(|e| Error::io(&meta_path, e))
    }
}

/// Loads `data.dwaf`, `data.json` and `adj.csv` from a dataset directory.
/// A missing adjacency file yields a graph of isolated nodes.
pub fn load_dataset_dir(dir: &Path) -> Result<(RawSeries, PredefinedGraph)> {
    let series = RawSeries::load(&dir.join(DATA_FILE))?;
    let adj = dir.join(ADJ_FILE);
    let graph = if adj.exists() {
        PredefinedGraph::load(&adj, series.n_nodes())?
    } else {
        PredefinedGraph::isolated(series.n_nodes())
    };
    Ok((series, graph))
}

pub fn save_dataset_dir(dir: &Path, series: &RawSeries, graph: &PredefinedGraph) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    series.save(&dir.join(DATA_FILE))?;
    let adj = dir.join(ADJ_FILE);
    std::fs::write(&adj, graph.to_csv()).map_err(|e| Error::io(&adj, e))
}

//! Run configuration: a TOML file with nested sections, dotted
//! `key=value` overrides, and the resolved model hyperparameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synthetic::SyntheticSpec;
use crate::error::{Error, Result};
use crate::numerics::InitScheme;

/// Model variants: the full model and seven ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Static row-normalized predefined adjacency instead of the learned one.
    NoAg,
    /// Without the graph-structure embedding.
    NoEg,
    /// Without the graph-structure and adaptive embeddings.
    NoEs,
    /// Without the time-of-day and day-of-week embeddings.
    NoEt,
    /// Temporal layer replaced by a single time-domain MLP.
    NoFft,
    NoSpatial,
    NoTemporal,
}

impl Variant {
    pub const ABLATIONS: [Variant; 7] = [
        Variant::NoAg,
        Variant::NoEg,
        Variant::NoEs,
        Variant::NoEt,
        Variant::NoFft,
        Variant::NoSpatial,
        Variant::NoTemporal,
    ];

    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoAg,
        Variant::NoEg,
        Variant::NoEs,
        Variant::NoEt,
        Variant::NoFft,
        Variant::NoSpatial,
        Variant::NoTemporal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAg => "no_ag",
            Variant::NoEg => "no_eg",
            Variant::NoEs => "no_es",
            Variant::NoEt => "no_et",
            Variant::NoFft => "no_fft",
            Variant::NoSpatial => "no_spatial",
            Variant::NoTemporal => "no_temporal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    pub fn has_graph_embedding(self) -> bool {
        !matches!(self, Variant::NoEg | Variant::NoEs)
    }

    pub fn has_adaptive_embedding(self) -> bool {
        self != Variant::NoEs
    }

    pub fn has_temporal_embedding(self) -> bool {
        self != Variant::NoEt
    }

    /// Hidden width `d_h` as a multiple of `d_f`.
    pub fn width_factor(self) -> usize {
        1 + self.has_graph_embedding() as usize
            + self.has_adaptive_embedding() as usize
            + 2 * self.has_temporal_embedding() as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    #[default]
    FreMlp,
    Cnn,
    Attention,
}

impl TemporalKind {
    pub const ALL: [TemporalKind; 3] = [TemporalKind::Cnn, TemporalKind::Attention, TemporalKind::FreMlp];

    pub fn name(self) -> &'static str {
        match self {
            TemporalKind::FreMlp => "fre_mlp",
            TemporalKind::Cnn => "cnn",
            TemporalKind::Attention => "attention",
        }
    }
}

/// Spatial attention logits are scaled by `1/sqrt(d_h/2)` or `1/sqrt(d_h)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScaling {
    #[default]
    HalfDh,
    Dh,
}

impl AttentionScaling {
    pub fn factor(self, d_h: usize) -> f64 {
        match self {
            AttentionScaling::HalfDh => 1.0 / (d_h as f64 / 2.0).sqrt(),
            AttentionScaling::Dh => 1.0 / (d_h as f64).sqrt(),
        }
    }
}

/// What the temporal layer's output is added to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalResidual {
    /// The embedding layer output `Z`.
    #[default]
    Embedding,
    /// The spatial layer output feeding the temporal layer.
    Spatial,
}

/// Scaling of the transform pair around the frequency MLPs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FftNorm {
    /// `1/sqrt(T)` on both the forward and the inverse transform.
    Ortho,
    /// Unscaled forward, `1/T` inverse.
    #[default]
    Backward,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// `[model]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_f: usize,
    pub layers: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub dropout: f64,
    pub scaling: AttentionScaling,
    pub init: InitScheme,
    pub variant: Variant,
    pub temporal: TemporalKind,
    pub temporal_residual: TemporalResidual,
    pub fft_norm: FftNorm,
    /// Hidden width of the frequency MLPs as a multiple of `d_h`.
    pub mlp_ratio: usize,
    /// Kernel of the causal convolution used by the `cnn` temporal layer.
    pub cnn_kernel: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_f: 20,
            layers: 1,
            t_in: 12,
            t_out: 12,
            dropout: 0.1,
            scaling: AttentionScaling::HalfDh,
            init: InitScheme::XavierUniform,
            variant: Variant::Full,
            temporal: TemporalKind::FreMlp,
            temporal_residual: TemporalResidual::Embedding,
            fft_norm: FftNorm::Backward,
            mlp_ratio: 1,
            cnn_kernel: 3,
        }
    }
}

/// `[train]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Gradient clipping by global norm; 0 disables it.
    pub clip_norm: f64,
    /// Batches evaluated per validation pass chunk.
    pub eval_batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 0.001,
            batch_size: 64,
            epochs: 80,
            clip_norm: 0.0,
            eval_batch_size: 256,
        }
    }
}

/// `[data]` section. With an empty `dir` the synthetic generator is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dir: String,
    pub split: [u32; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: String::new(),
            split: [6, 2, 2],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub synthetic: SyntheticSpec,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::with_overrides(s, &[])
    }

    /// Parses `s` and applies `key.path=value` overrides on top. Every
    /// override must name an existing key.
    pub fn with_overrides(s: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(s).map_err(config_err)?;
        let defaults = toml::Table::try_from(RunConfig::default()).map_err(config_err)?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            let mut known = &defaults;
            for (i, part) in path.iter().enumerate() {
                match known.get(*part) {
                    Some(toml::Value::Table(t)) if i + 1 < path.len() => known = t,
                    Some(v) if i + 1 == path.len() && !v.is_table() => {}
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
            }
            let mut cur = &mut table;
            for part in &path[..path.len() - 1] {
                let entry = cur
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                cur = entry
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{part:?} is not a section")))?;
            }
            cur.insert(path[path.len() - 1].to_string(), parse_literal(raw.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::with_overrides(&s, overrides)
    }

    /// All values, defaults included.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (m, t) = (&self.model, &self.train);
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr must be non-negative, got {}", t.lr));
        }
        if t.batch_size == 0 || t.epochs == 0 || t.eval_batch_size == 0 {
            return bad("train.batch_size, train.epochs and train.eval_batch_size must be at least 1".into());
        }
        if !(t.clip_norm >= 0.0) {
            return bad("train.clip_norm must be non-negative".into());
        }
        if m.d_f == 0 || m.layers == 0 || m.t_in == 0 || m.t_out == 0 || m.mlp_ratio == 0 || m.cnn_kernel == 0 {
            return bad("model sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return bad(format!("model.dropout must be in [0, 1), got {}", m.dropout));
        }
        if self.data.split.iter().all(|&r| r == 0) {
            return bad("data.split ratios sum to zero".into());
        }
        self.synthetic.validate()
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        (!self.data.dir.is_empty()).then(|| PathBuf::from(&self.data.dir))
    }

    /// Model hyperparameters for a dataset with `n_nodes` nodes and
    /// `steps_per_day` time-of-day slots.
    pub fn model_config(&self, n_nodes: usize, steps_per_day: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_nodes,
            steps_per_day,
            t_in: m.t_in,
            t_out: m.t_out,
            d_f: m.d_f,
            layers: m.layers,
            dropout: m.dropout,
            scaling: m.scaling,
            init: m.init,
            variant: m.variant,
            temporal: m.temporal,
            temporal_residual: m.temporal_residual,
            fft_norm: m.fft_norm,
            mlp_ratio: m.mlp_ratio,
            cnn_kernel: m.cnn_kernel,
            linear_mlp: false,
        }
    }
}

/// Fully resolved model hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub steps_per_day: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub d_f: usize,
    pub layers: usize,
    pub dropout: f64,
    pub scaling: AttentionScaling,
    pub init: InitScheme,
    pub variant: Variant,
    pub temporal: TemporalKind,
    pub temporal_residual: TemporalResidual,
    #[serde(default)]
    pub fft_norm: FftNorm,
    pub mlp_ratio: usize,
    pub cnn_kernel: usize,
    /// Skip the GELU inside the frequency MLPs (used to check the layer
    /// against a complex linear map).
    #[serde(default)]
    pub linear_mlp: bool,
}

impl ModelConfig {
    pub fn d_h(&self) -> usize {
        self.d_f * self.variant.width_factor()
    }

    /// Intermediate channel count of the spatial reduce/elevate convolutions.
    pub fn mid_channels(&self) -> usize {
        self.t_in.div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.steps_per_day == 0 || self.t_in == 0 || self.t_out == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_f == 0 || self.layers == 0 || self.mlp_ratio == 0 || self.cnn_kernel == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model.d_f, 20);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.epochs, 80);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::default();
        c.model.variant = Variant::NoFft;
        c.data.dir = "/tmp/x".into();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[model]\nd_ff = 3\n").is_err());
        assert!(RunConfig::from_toml_str("sed = 3\n").is_err());
        let e = RunConfig::with_overrides("", &["model.dff=3".into()]).unwrap_err();
        assert!(e.to_string().contains("model.dff"));
        assert!(RunConfig::with_overrides("", &["model=3".into()]).is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let c = RunConfig::with_overrides(
            "seed = 1\n[model]\nd_f = 8\n",
            &["model.d_f=4".into(), "model.variant=no_et".into(), "seed=9".into(), "model.init=\"orthogonal\"".into()],
        )
        .unwrap();
        assert_eq!((c.seed, c.model.d_f, c.model.variant), (9, 4, Variant::NoEt));
        assert_eq!(c.model.init, InitScheme::Orthogonal);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::with_overrides("", &["train.lr=-1".into()]).is_err());
        assert!(RunConfig::with_overrides("", &["train.batch_size=0".into()]).is_err());
        assert!(RunConfig::with_overrides("", &["model.variant=bogus".into()]).is_err());
        assert!(RunConfig::with_overrides("", &["model.dropout=1.0".into()]).is_err());
    }

    #[test]
    fn widths_per_variant() {
        let widths: Vec<usize> = Variant::ALL.iter().map(|v| v.width_factor()).collect();
        assert_eq!(widths, vec![5, 5, 4, 3, 3, 5, 5, 5]);
    }

    #[test]
    fn scaling_factors() {
        assert!((AttentionScaling::HalfDh.factor(10) - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        assert!((AttentionScaling::Dh.factor(16) - 0.25).abs() < 1e-15);
    }
}

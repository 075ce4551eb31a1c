//! The full forecaster: embedding, stacked spatial/temporal layers and a
//! regression head, plus its ablation variants and persistence.

mod checkpoint;

pub use checkpoint::{Manifest, ParamEntry, CHECKPOINT_FORMAT, MANIFEST_FILE};

use crate::config::{ModelConfig, TemporalKind, TemporalResidual, Variant};
use crate::data::{Batch, NormStats, PredefinedGraph, DAYS_PER_WEEK};
use crate::embedding::{Embedding, EmbeddingOut};
use crate::error::Result;
use crate::nn::{Builder, Linear};
use crate::numerics::rng::{stream_rng, Stream};
use crate::numerics::{ParamStore, Real, Tape, Tensor, Var};
use crate::spatial::SpatialLayer;
use crate::temporal::TemporalMixer;

#[derive(Clone, Debug)]
pub struct Block {
    pub spatial: Option<SpatialLayer>,
    pub temporal: Option<TemporalMixer>,
}

#[derive(Clone, Debug)]
pub struct DwafmModel<F> {
    pub config: ModelConfig,
    pub stats: NormStats,
    pub store: ParamStore<F>,
    pub graph: PredefinedGraph,
    pub embedding: Embedding<F>,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

/// Nodes of interest recorded by [`DwafmModel::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// Physical-unit forecast `[B, T_f, N]`.
    pub pred: Var,
    pub embedding: EmbeddingOut,
    /// Output of the last block, `[B, T, N, d_h]`.
    pub hidden: Var,
}

impl<F: Real> DwafmModel<F> {
    /// Builds a model with parameters drawn from the init stream of `seed`.
    pub fn new(config: ModelConfig, graph: &PredefinedGraph, stats: NormStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            scheme: config.init,
            rng: stream_rng(seed, Stream::Init, 0),
        };
        let embedding = Embedding::new(&mut b, &config, graph)?;
        let blocks = (0..config.layers)
            .map(|i| {
                let prefix = format!("block{i}");
                Block {
                    spatial: (config.variant != Variant::NoSpatial)
                        .then(|| SpatialLayer::new(&mut b, &config, &format!("{prefix}.spatial"))),
                    temporal: TemporalMixer::new(&mut b, &config, &format!("{prefix}.temporal")),
                }
            })
            .collect();
        let head = b.linear("head", config.t_in * config.d_h(), config.t_out, true);
        Ok(DwafmModel {
            config,
            stats,
            store,
            graph: graph.clone(),
            embedding,
            blocks,
            head,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    /// Records the forward pass of `batch` on `tape`.
    pub fn forward(&self, tape: &mut Tape<F>, batch: &Batch<F>) -> Result<Forward> {
        let cfg = &self.config;
        let store = &self.store;
        let emb = self.embedding.forward(tape, store, batch)?;
        let z = emb.z;
        let mut cur = z;
        for block in &self.blocks {
            let zs = match &block.spatial {
                Some(s) => s.forward(tape, store, cur)?,
                None => cur,
            };
            cur = match &block.temporal {
                Some(m) => {
                    let mixed = m.forward(tape, store, zs, cfg.dropout, cfg.linear_mlp)?;
                    let residual = match cfg.temporal_residual {
                        TemporalResidual::Embedding => z,
                        TemporalResidual::Spatial => zs,
                    };
                    tape.add(mixed, residual)?
                }
                None => zs,
            };
        }
        let s = tape.shape(cur).to_vec();
        let (bsz, t, n, d) = (s[0], s[1], s[2], s[3]);
        let h = tape.permute(cur, &[0, 2, 1, 3])?;
        let h = tape.reshape(h, &[bsz, n, t * d])?;
        let out = self.head.forward(tape, store, h)?;
        let out = tape.permute(out, &[0, 2, 1])?;
        let out = tape.scale(out, F::of(self.stats.std));
        let pred = tape.shift(out, F::of(self.stats.mean));
        Ok(Forward {
            pred,
            embedding: emb,
            hidden: cur,
        })
    }

    /// Inference-mode forecast `[B, T_f, N]` in physical units.
    pub fn predict(&self, batch: &Batch<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::eval();
        let f = self.forward(&mut tape, batch)?;
        Ok(tape.value(f.pred).clone())
    }

    /// Learned adjacency `[B, T, N, N]` for `batch`, or the static one
    /// broadcast to that shape. `None` when the variant has no graph.
    pub fn adjacency(&self, batch: &Batch<F>) -> Result<Option<Tensor<F>>> {
        let mut tape = Tape::eval();
        let out = self.embedding.forward(&mut tape, &self.store, batch)?;
        let Some(a) = out.a_g else { return Ok(None) };
        let a = tape.value(a).clone();
        if a.ndim() == 4 {
            return Ok(Some(a));
        }
        let s = batch.x.shape();
        let (bsz, t, n) = (s[0], s[1], s[2]);
        let data: Vec<F> = (0..bsz * t).flat_map(|_| a.data().iter().copied()).collect();
        Ok(Some(Tensor::new(vec![bsz, t, n, n], data)?))
    }
}

/// Parameter count derived from the architecture alone.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (n, t, tf, df, nd) = (cfg.n_nodes, cfg.t_in, cfg.t_out, cfg.d_f, cfg.steps_per_day);
    let v = cfg.variant;
    let dh = cfg.d_h();
    let c = cfg.mid_channels();
    let hid = dh * cfg.mlp_ratio;

    let mut embed = 2 * df;
    if v.has_temporal_embedding() {
        embed += (nd + DAYS_PER_WEEK) * df;
    }
    if v.has_graph_embedding() {
        embed += n * df;
        if v != Variant::NoAg {
            embed += 2 * df;
        }
    }
    if v.has_adaptive_embedding() {
        embed += t * n * df;
    }

    let spatial = if v == Variant::NoSpatial {
        0
    } else {
        (t * c + c) + (c + 1) + 3 * dh * dh + (c + c) + (c * t + t) + 2 * dh
    };
    let mlp = 2 * dh * hid + hid + dh;
    let temporal = match (v, cfg.temporal) {
        (Variant::NoTemporal, _) => 0,
        (Variant::NoFft, _) => mlp,
        (_, TemporalKind::FreMlp) => 2 * mlp,
        (_, TemporalKind::Cnn) => dh * dh * cfg.cnn_kernel + dh,
        (_, TemporalKind::Attention) => 3 * dh * dh,
    };
    embed + cfg.layers * (spatial + temporal) + t * dh * tf + tf
}

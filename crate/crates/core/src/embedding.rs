//! Embedding layer: feature, graph-structure, adaptive and temporal
//! embeddings concatenated into the hidden representation `Z`.

use crate::config::ModelConfig;
use crate::data::{Batch, PredefinedGraph, DAYS_PER_WEEK};
use crate::error::{Error, Result};
use crate::nn::{Builder, Linear};
use crate::numerics::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Graph used for the graph-structure embedding.
#[derive(Clone, Debug)]
enum GraphMode<F> {
    /// Attention over the input restricted to the mask `[N, N]`.
    Dynamic { wq: ParamId, wk: ParamId, mask: Tensor<F> },
    /// Fixed adjacency `[N, N]`.
    Static(Tensor<F>),
}

#[derive(Clone, Debug)]
pub struct Embedding<F> {
    feat: Linear,
    tod: Option<ParamId>,
    dow: Option<ParamId>,
    node: Option<ParamId>,
    graph: Option<GraphMode<F>>,
    adaptive: Option<ParamId>,
}

/// Output of [`Embedding::forward`].
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingOut {
    /// `[B, T, N, d_h]`.
    pub z: Var,
    /// Row-stochastic attention before symmetrization, `[B, T, N, N]`.
    pub a_a: Option<Var>,
    /// Adjacency used for the graph embedding: `[B, T, N, N]` when learned,
    /// `[N, N]` when static.
    pub a_g: Option<Var>,
}

impl<F: Real> Embedding<F> {
    pub fn new(b: &mut Builder<'_, F>, cfg: &ModelConfig, graph: &PredefinedGraph) -> Result<Self> {
        let (n, d_f, v) = (cfg.n_nodes, cfg.d_f, cfg.variant);
        if graph.n_nodes() != n {
            return Err(Error::InvalidShape(format!(
                "graph has {} nodes, model expects {n}",
                graph.n_nodes()
            )));
        }
        let feat = b.linear("embed.feat", 1, d_f, true);
        let (tod, dow) = if v.has_temporal_embedding() {
            (
                Some(b.table("embed.tod", &[cfg.steps_per_day, d_f])),
                Some(b.table("embed.dow", &[DAYS_PER_WEEK, d_f])),
            )
        } else {
            (None, None)
        };
        let (node, graph) = if v.has_graph_embedding() {
            let mode = if v == crate::config::Variant::NoAg {
                GraphMode::Static(graph.row_normalized().cast())
            } else {
                let fans = crate::numerics::Fans::new(1, d_f);
                GraphMode::Dynamic {
                    wq: b.weight("embed.graph.wq", &[1, d_f], fans),
                    wk: b.weight("embed.graph.wk", &[1, d_f], fans),
                    mask: graph.mask().cast(),
                }
            };
            (Some(b.table("embed.node", &[n, d_f])), Some(mode))
        } else {
            (None, None)
        };
        let adaptive = v
            .has_adaptive_embedding()
            .then(|| b.table("embed.adaptive", &[cfg.t_in, n, d_f]));
        Ok(Embedding {
            feat,
            tod,
            dow,
            node,
            graph,
            adaptive,
        })
    }

    pub fn forward(&self, tape: &mut Tape<F>, store: &ParamStore<F>, batch: &Batch<F>) -> Result<EmbeddingOut> {
        let x = tape.constant(batch.x.clone());
        let s = batch.x.shape();
        let (bsz, t, n) = (s[0], s[1], s[2]);
        let mut parts = vec![self.feat.forward(tape, store, x)?];
        let (mut a_a, mut a_g) = (None, None);

        if let (Some(node), Some(mode)) = (self.node, &self.graph) {
            let node = tape.param(store, node);
            let e_g = match mode {
                GraphMode::Dynamic { wq, wk, mask } => {
                    let wq = tape.param(store, *wq);
                    let wk = tape.param(store, *wk);
                    let (att, sym) = dynamic_adjacency(tape, x, wq, wk, mask)?;
                    a_a = Some(att);
                    a_g = Some(sym);
                    dwgs_embedding(tape, sym, node)?
                }
                GraphMode::Static(adj) => {
                    let adj = tape.constant(adj.clone());
                    a_g = Some(adj);
                    let e = tape.matmul(adj, node)?;
                    let e = tape.broadcast_leading(e, t)?;
                    tape.broadcast_leading(e, bsz)?
                }
            };
            parts.push(e_g);
        }
        if let Some(ea) = self.adaptive {
            let ea = tape.param(store, ea);
            parts.push(tape.broadcast_leading(ea, bsz)?);
        }
        if let (Some(tod), Some(dow)) = (self.tod, self.dow) {
            let tod = tape.param(store, tod);
            let dow = tape.param(store, dow);
            let (e_d, e_w) = temporal_embedding(tape, tod, dow, &batch.tod, &batch.dow, [bsz, t, n])?;
            parts.push(e_d);
            parts.push(e_w);
        }
        let z = tape.concat(&parts)?;
        Ok(EmbeddingOut { z, a_a, a_g })
    }
}

/// Masked node-to-node attention at every `(batch, step)` from inputs
/// `x: [B, T, N, D]` and projections `[D, d_f]`. Returns the row-stochastic
/// scores `A_a` and their symmetrization `A_g = (A_a + A_a^T) / 2`, both
/// `[B, T, N, N]`.
pub fn dynamic_adjacency<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    wq: Var,
    wk: Var,
    mask: &Tensor<F>,
) -> Result<(Var, Var)> {
    let d_f = tape.shape(wq)[1];
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let kt = tape.transpose_last(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, F::of(1.0 / (d_f as f64).sqrt()));
    let a_a = tape.softmax(logits, Some(mask))?;
    let a_t = tape.transpose_last(a_a)?;
    let sum = tape.add(a_a, a_t)?;
    Ok((a_a, tape.scale(sum, F::of(0.5))))
}

/// `E_g[b, t] = A_g[b, t] · B_node`.
pub fn dwgs_embedding<F: Real>(tape: &mut Tape<F>, a_g: Var, node: Var) -> Result<Var> {
    tape.matmul(a_g, node)
}

/// Looks up time-of-day and day-of-week rows for every `(b, t)` and repeats
/// them over the `n` nodes. Indices have length `B * T`.
pub fn temporal_embedding<F: Real>(
    tape: &mut Tape<F>,
    tod_table: Var,
    dow_table: Var,
    tod: &[usize],
    dow: &[usize],
    [bsz, t, n]: [usize; 3],
) -> Result<(Var, Var)> {
    let expand = |idx: &[usize]| -> Vec<usize> {
        idx.iter().flat_map(|&i| std::iter::repeat_n(i, n)).collect()
    };
    let e_d = tape.gather_rows(tod_table, &expand(tod), &[bsz, t, n])?;
    let e_w = tape.gather_rows(dow_table, &expand(dow), &[bsz, t, n])?;
    Ok((e_d, e_w))
}

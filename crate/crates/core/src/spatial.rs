//! Spatial layer: compress each node's window to one vector, mix nodes with
//! self-attention, expand back over time, then residual + layer norm.

use crate::config::ModelConfig;
use crate::error::Result;
use crate::nn::{Builder, Conv, Linear};
use crate::numerics::{ParamId, ParamStore, Real, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct SpatialLayer {
    t: usize,
    scale: f64,
    pub down1: Conv,
    pub down2: Conv,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub up1: Conv,
    pub up2: Conv,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl SpatialLayer {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, cfg: &ModelConfig, prefix: &str) -> Self {
        let (t, c, d_h) = (cfg.t_in, cfg.mid_channels(), cfg.d_h());
        SpatialLayer {
            t,
            scale: cfg.scaling.factor(d_h),
            down1: b.conv(&format!("{prefix}.down1"), t, c, 1),
            down2: b.conv(&format!("{prefix}.down2"), c, 1, 1),
            q: b.linear(&format!("{prefix}.wq"), d_h, d_h, false),
            k: b.linear(&format!("{prefix}.wk"), d_h, d_h, false),
            v: b.linear(&format!("{prefix}.wv"), d_h, d_h, false),
            up1: b.conv(&format!("{prefix}.up1"), 1, c, 1),
            up2: b.conv(&format!("{prefix}.up2"), c, t, 1),
            gamma: b.ones(format!("{prefix}.ln.gamma"), &[d_h]),
            beta: b.zeros(format!("{prefix}.ln.beta"), &[d_h]),
        }
    }

    /// `[B, T, N, d_h] -> [B, N, d_h]`, time steps acting as channels.
    pub fn reduce<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, z: Var) -> Result<Var> {
        let s = tape.shape(z).to_vec();
        let (bsz, t, n, d) = (s[0], s[1], s[2], s[3]);
        let x = tape.permute(z, &[0, 2, 1, 3])?;
        let x = tape.reshape(x, &[bsz * n, t, d])?;
        let h = self.down1.forward(tape, store, x, 0)?;
        let h = tape.relu(h);
        let h = self.down2.forward(tape, store, h, 0)?;
        tape.reshape(h, &[bsz, n, d])
    }

    /// Unmasked scaled dot-product attention over nodes, `[B, N, d_h]`.
    pub fn attention<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, zr: Var) -> Result<Var> {
        let q = self.q.forward(tape, store, zr)?;
        let k = self.k.forward(tape, store, zr)?;
        let v = self.v.forward(tape, store, zr)?;
        let kt = tape.transpose_last(k)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, F::of(self.scale));
        let att = tape.softmax(logits, None)?;
        tape.matmul(att, v)
    }

    /// `[B, N, d_h] -> [B, T, N, d_h]`.
    pub fn elevate<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, zs: Var) -> Result<Var> {
        let s = tape.shape(zs).to_vec();
        let (bsz, n, d) = (s[0], s[1], s[2]);
        let x = tape.reshape(zs, &[bsz * n, 1, d])?;
        let h = self.up1.forward(tape, store, x, 0)?;
        let h = tape.relu(h);
        let h = self.up2.forward(tape, store, h, 0)?;
        let h = tape.reshape(h, &[bsz, n, self.t, d])?;
        tape.permute(h, &[0, 2, 1, 3])
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, z: Var) -> Result<Var> {
        let zr = self.reduce(tape, store, z)?;
        let zs = self.attention(tape, store, zr)?;
        let ze = self.elevate(tape, store, zs)?;
        let sum = tape.add(ze, z)?;
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        tape.layer_norm(sum, gamma, beta, LAYER_NORM_EPS)
    }
}

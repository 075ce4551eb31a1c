//! Temporal layer: mixing along the time axis, in the frequency domain by
//! default, with convolution and attention alternatives for comparison.

use crate::config::{FftNorm, ModelConfig, TemporalKind, Variant};
use crate::error::Result;
use crate::nn::{Builder, Conv, Linear, Mlp};
use crate::numerics::{ParamStore, Real, Tape, Var};

/// Frequency-domain MLPs: real FFT over time, two independent MLPs applied
/// to the real and imaginary parts with complex-product cross terms, inverse
/// FFT back to `T` steps.
#[derive(Clone, Debug)]
pub struct FreMlp {
    pub mlp_r: Mlp,
    pub mlp_i: Mlp,
    pub norm: FftNorm,
}

impl FreMlp {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, prefix: &str, d_h: usize, hidden: usize, norm: FftNorm) -> Self {
        FreMlp {
            mlp_r: Mlp::new(b, &format!("{prefix}.mlp_r"), d_h, hidden),
            mlp_i: Mlp::new(b, &format!("{prefix}.mlp_i"), d_h, hidden),
            norm,
        }
    }

    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        z: Var,
        dropout: f64,
        linear: bool,
    ) -> Result<Var> {
        let t = tape.shape(z)[1];
        let (re, im) = tape.rfft(z, 1)?;
        let (re, im) = match self.norm {
            FftNorm::Ortho => {
                let s = F::of(1.0 / (t as f64).sqrt());
                (tape.scale(re, s), tape.scale(im, s))
            }
            FftNorm::Backward => (re, im),
        };
        let mlp = |m: &Mlp, x: Var, tape: &mut Tape<F>| m.forward(tape, store, x, dropout, linear);
        let rr = mlp(&self.mlp_r, re, tape)?;
        let ii = mlp(&self.mlp_i, im, tape)?;
        let ir = mlp(&self.mlp_i, re, tape)?;
        let ri = mlp(&self.mlp_r, im, tape)?;
        let out_re = tape.sub(rr, ii)?;
        let out_im = tape.add(ir, ri)?;
        let y = tape.irfft(out_re, out_im, 1, t)?;
        Ok(match self.norm {
            FftNorm::Ortho => tape.scale(y, F::of((t as f64).sqrt())),
            FftNorm::Backward => y,
        })
    }
}

/// Causal convolution over time with `d_h` channels.
#[derive(Clone, Debug)]
pub struct CausalConv {
    pub conv: Conv,
}

impl CausalConv {
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, z: Var) -> Result<Var> {
        let s = tape.shape(z).to_vec();
        let (bsz, t, n, d) = (s[0], s[1], s[2], s[3]);
        let x = tape.permute(z, &[0, 2, 3, 1])?;
        let x = tape.reshape(x, &[bsz * n, d, t])?;
        let y = self.conv.forward(tape, store, x, self.conv.kernel - 1)?;
        let y = tape.reshape(y, &[bsz, n, d, t])?;
        tape.permute(y, &[0, 3, 1, 2])
    }
}

/// Single-head scaled dot-product self-attention over the time axis.
#[derive(Clone, Debug)]
pub struct TimeAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl TimeAttention {
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, z: Var) -> Result<Var> {
        let d = tape.shape(z)[3];
        let x = tape.permute(z, &[0, 2, 1, 3])?;
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, x)?;
        let v = self.v.forward(tape, store, x)?;
        let kt = tape.transpose_last(k)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, F::of(1.0 / (d as f64).sqrt()));
        let att = tape.softmax(logits, None)?;
        let y = tape.matmul(att, v)?;
        tape.permute(y, &[0, 2, 1, 3])
    }
}

/// The mixing function of one temporal layer (without its residual).
#[derive(Clone, Debug)]
pub enum TemporalMixer {
    FreMlp(FreMlp),
    /// Plain MLP on the feature axis, no frequency transform.
    Mlp(Mlp),
    Cnn(CausalConv),
    Attention(TimeAttention),
}

impl TemporalMixer {
    /// Builds the mixer for `cfg`, or `None` when the variant drops it.
    pub fn new<F: Real>(b: &mut Builder<'_, F>, cfg: &ModelConfig, prefix: &str) -> Option<Self> {
        let d_h = cfg.d_h();
        let hidden = d_h * cfg.mlp_ratio;
        Some(match (cfg.variant, cfg.temporal) {
            (Variant::NoTemporal, _) => return None,
            (Variant::NoFft, _) => TemporalMixer::Mlp(Mlp::new(b, &format!("{prefix}.mlp"), d_h, hidden)),
            (_, TemporalKind::FreMlp) => TemporalMixer::FreMlp(FreMlp::new(b, prefix, d_h, hidden, cfg.fft_norm)),
            (_, TemporalKind::Cnn) => TemporalMixer::Cnn(CausalConv {
                conv: b.conv(&format!("{prefix}.conv"), d_h, d_h, cfg.cnn_kernel),
            }),
            (_, TemporalKind::Attention) => TemporalMixer::Attention(TimeAttention {
                q: b.linear(&format!("{prefix}.wq"), d_h, d_h, false),
                k: b.linear(&format!("{prefix}.wk"), d_h, d_h, false),
                v: b.linear(&format!("{prefix}.wv"), d_h, d_h, false),
            }),
        })
    }

    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        z: Var,
        dropout: f64,
        linear: bool,
    ) -> Result<Var> {
        match self {
            TemporalMixer::FreMlp(m) => m.forward(tape, store, z, dropout, linear),
            TemporalMixer::Mlp(m) => m.forward(tape, store, z, dropout, linear),
            TemporalMixer::Cnn(c) => c.forward(tape, store, z),
            TemporalMixer::Attention(a) => a.forward(tape, store, z),
        }
    }
}

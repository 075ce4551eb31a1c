//! Small building blocks shared by the model layers.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{init_tensor, Fans, InitScheme, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Registers freshly initialized parameters in creation order.
pub struct Builder<'a, F> {
    pub store: &'a mut ParamStore<F>,
    pub scheme: InitScheme,
    pub rng: ChaCha8Rng,
}

impl<F: Real> Builder<'_, F> {
    pub fn weight(&mut self, name: impl Into<String>, shape: &[usize], fans: Fans) -> ParamId {
        let t = init_tensor(shape, fans, self.scheme, &mut self.rng);
        self.store.add(name, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::ones(shape))
    }

    /// A lookup table or free tensor: fans follow the usual convention of
    /// treating dim 1 onward as the input side.
    pub fn table(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let rest: usize = shape[1..].iter().product();
        let receptive: usize = shape[2..].iter().product();
        let fans = Fans::new(rest, shape[0] * receptive);
        self.weight(name, shape, fans)
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, bias: bool) -> Linear {
        let w = self.weight(format!("{name}.w"), &[d_in, d_out], Fans::new(d_in, d_out));
        let b = bias.then(|| self.zeros(format!("{name}.b"), &[d_out]));
        Linear { w, b }
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Conv {
        let fans = Fans::new(c_in * kernel, c_out * kernel);
        let w = self.weight(format!("{name}.w"), &[c_out, c_in, kernel], fans);
        let b = self.zeros(format!("{name}.b"), &[c_out]);
        Conv { w, b, kernel }
    }
}

/// `x · W (+ b)` on the last axis, `W` stored as `[in, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// 1-D convolution over `[batch, channels, len]` with left zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv {
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        left_pad: usize,
    ) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv1d(x, w, b, left_pad)
    }
}

/// `FC2(Dropout(GELU(FC1(x))))`; `linear` drops the activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<F: Real>(b: &mut Builder<'_, F>, name: &str, d: usize, hidden: usize) -> Self {
        Mlp {
            fc1: b.linear(&format!("{name}.fc1"), d, hidden, true),
            fc2: b.linear(&format!("{name}.fc2"), hidden, d, true),
        }
    }

    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        dropout: f64,
        linear: bool,
    ) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = if linear { h } else { tape.gelu(h) };
        let h = tape.dropout(h, dropout)?;
        self.fc2.forward(tape, store, h)
    }
}

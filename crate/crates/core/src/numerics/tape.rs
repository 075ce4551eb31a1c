//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and the recipe
//! for its backward rule. [`Tape::backward`] walks the nodes in reverse
//! order, so parents always receive their full gradient before they are
//! visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::fft::{self, rfft_bins};
use crate::numerics::ops::{self, gemm_t};
use crate::numerics::{ComplexTensor, ParamId, ParamStore, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, F),
    Shift(Var),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    Square(Var),
    Dropout(Var, Vec<F>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
    },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    Broadcast(Var, usize),
    Sum(Var),
    RfftRe(Var, usize),
    RfftIm(Var, usize),
    Irfft {
        re: Var,
        im: Var,
        axis: usize,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recorder for one forward computation.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    rng: Option<ChaCha8Rng>,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::eval()
    }
}

impl<F: Real> Tape<F> {
    /// A tape in inference mode: dropout is the identity.
    pub fn eval() -> Self {
        Tape {
            nodes: Vec::new(),
            rng: None,
        }
    }

    /// A tape in training mode; dropout masks are drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Tape {
            nodes: Vec::new(),
            rng: Some(rng),
        }
    }

    /// Training mode with a generator seeded from `seed`.
    pub fn training_seeded(seed: u64) -> Self {
        Self::training(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Constant => false,
            Op::Input | Op::Param(_) => true,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Constant, &[])
    }

    /// A leaf whose gradient is tracked (used for checking op gradients).
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Input, &[])
    }

    /// Binds a stored parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let y = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(a).last().unwrap();
        if self.shape(bias) != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                left: self.shape(a).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data().to_vec();
        let x = self.value(a);
        let data = x
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(&b).map(|(&v, &c)| v + c))
            .collect();
        let y = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(y, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let y = self.value(a).map(|v| v * s);
        self.push(y, Op::Scale(a, s), &[a])
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: F) -> Var {
        let y = self.value(a).map(|v| v + c);
        self.push(y, Op::Shift(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = ops::relu(self.value(a));
        self.push(y, Op::Relu(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let y = ops::gelu(self.value(a));
        self.push(y, Op::Gelu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v.abs());
        self.push(y, Op::Abs(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v * v);
        self.push(y, Op::Square(a), &[a])
    }

    /// Inverted dropout; the identity on an inference tape or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidShape(format!("dropout rate {p} outside [0, 1)")));
        }
        let Some(rng) = self.rng.as_mut() else {
            return Ok(a);
        };
        if p == 0.0 {
            return Ok(a);
        }
        let mask: Vec<F> = ops::dropout_mask(self.nodes[a.0].value.numel(), p, rng);
        let x = self.value(a);
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let y = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Dropout(a, mask), &[a]))
    }

    /// Softmax over the last axis, optionally masked (see
    /// [`ops::masked_softmax_lastdim`]).
    pub fn softmax(&mut self, a: Var, mask: Option<&Tensor<F>>) -> Result<Var> {
        let y = ops::masked_softmax_lastdim(self.value(a), mask)?;
        Ok(self.push(y, Op::Softmax(a), &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, cache) =
            ops::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat: cache.xhat,
                rstd: cache.rstd,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, left_pad: usize) -> Result<Var> {
        let y = ops::conv1d(self.value(x), self.value(w), self.value(b), left_pad)?;
        Ok(self.push(
            y,
            Op::Conv1d {
                x,
                w,
                b,
                pad: left_pad,
            },
            &[x, w, b],
        ))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let y = self.value(a).permute(perm)?;
        Ok(self.push(y, Op::Permute(a, perm.to_vec()), &[a]))
    }

    pub fn transpose_last(&mut self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(Error::InvalidShape("transpose needs rank >= 2".into()));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 1, nd - 2);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape(a), &[a]))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::Shape {
                    op: "concat",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let y = Tensor::new(shape, data)?;
        Ok(self.push(y, Op::Concat(parts.to_vec()), parts))
    }

    /// Row lookup: output `[lead..., cols]` with row `i` = `table[index[i]]`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize], lead: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 || lead.iter().product::<usize>() != index.len() {
            return Err(Error::InvalidShape(format!(
                "gather of {} rows into {lead:?} from table {ts:?}",
                index.len()
            )));
        }
        let (rows, cols) = (ts[0], ts[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange { index: bad, rows });
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(&t[i * cols..(i + 1) * cols]);
        }
        let mut shape = lead.to_vec();
        shape.push(cols);
        let y = Tensor::new(shape, data)?;
        Ok(self.push(y, Op::Gather(table, index.to_vec()), &[table]))
    }

    /// Repeats `a` along a new leading axis of length `reps`.
    pub fn broadcast_leading(&mut self, a: Var, reps: usize) -> Result<Var> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(x.numel() * reps);
        for _ in 0..reps {
            data.extend_from_slice(x.data());
        }
        let mut shape = vec![reps];
        shape.extend_from_slice(x.shape());
        let y = Tensor::new(shape, data)?;
        Ok(self.push(y, Op::Broadcast(a, reps), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.push(y, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, F::one() / F::of(n as f64))
    }

    /// Real FFT along `axis`, returning `(real, imag)` half-spectrum nodes.
    pub fn rfft(&mut self, a: Var, axis: usize) -> Result<(Var, Var)> {
        let z = fft::rfft_axis(self.value(a), axis)?;
        let re = self.push(z.real, Op::RfftRe(a, axis), &[a]);
        let im = self.push(z.imag, Op::RfftIm(a, axis), &[a]);
        Ok((re, im))
    }

    /// Inverse of [`Tape::rfft`], restoring `len` samples along `axis`.
    pub fn irfft(&mut self, re: Var, im: Var, axis: usize, len: usize) -> Result<Var> {
        let z = ComplexTensor::new(self.value(re).clone(), self.value(im).clone())?;
        let y = fft::irfft_axis(&z, axis, len)?;
        Ok(self.push(y, Op::Irfft { re, im, axis }, &[re, im]))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(shape.to_vec(), vec![F::one()])?);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradients of every bound parameter into its accumulator.
    pub fn accumulate_param_grads(&self, grads: &Gradients<F>, store: &mut ParamStore<F>) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let p = store.get_mut(*id);
                for (acc, &v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc = *acc + v;
                }
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v), "gradient shape for node {}", v.0);
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn elementwise(&self, g: &Tensor<F>, v: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let x = self.value(v);
        let data = g.data().iter().zip(x.data()).map(|(&gi, &xi)| f(gi, xi)).collect();
        Tensor::new(g.shape().to_vec(), data).expect("same shape")
    }

    fn backprop_node(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ga, gb) = matmul_backward(self.value(*a), self.value(*b), g)?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = self.elementwise(g, *b, |gi, bi| gi * bi);
                let gb = self.elementwise(g, *a, |gi, ai| gi * ai);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::AddBias(a, bias) => {
                let d = *g.shape().last().unwrap();
                let mut gb = vec![F::zero(); d];
                for row in g.data().chunks(d) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *bias, Tensor::new(vec![d], gb)?);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * *s)),
            Op::Shift(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let ga = self.elementwise(g, *a, |gi, x| if x > F::zero() { gi } else { F::zero() });
                self.accumulate(grads, *a, ga);
            }
            Op::Gelu(a) => {
                let ga = self.elementwise(g, *a, |gi, x| gi * ops::gelu_grad_scalar(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Abs(a) => {
                let ga = self.elementwise(g, *a, |gi, x| {
                    if x > F::zero() {
                        gi
                    } else if x < F::zero() {
                        -gi
                    } else {
                        F::zero()
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let ga = self.elementwise(g, *a, |gi, x| gi * (x + x));
                self.accumulate(grads, *a, ga);
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(&gi, &m)| gi * m).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let d = *y.shape().last().unwrap();
                let mut out = vec![F::zero(); y.numel()];
                for ((orow, yrow), grow) in out
                    .chunks_mut(d)
                    .zip(y.data().chunks(d))
                    .zip(g.data().chunks(d))
                {
                    let dot: F = yrow.iter().zip(grow).map(|(&p, &q)| p * q).sum();
                    for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *g.shape().last().unwrap();
                let gam = self.value(*gamma).data();
                let dn = F::of(d as f64);
                let mut gx = vec![F::zero(); g.numel()];
                let mut ggam = vec![F::zero(); d];
                let mut gbet = vec![F::zero(); d];
                for (r, grow) in g.data().chunks(d).enumerate() {
                    let hrow = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = F::zero();
                    let mut sum_dh_h = F::zero();
                    for j in 0..d {
                        let dh = grow[j] * gam[j];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * hrow[j];
                        ggam[j] = ggam[j] + grow[j] * hrow[j];
                        gbet[j] = gbet[j] + grow[j];
                    }
                    for j in 0..d {
                        let dh = grow[j] * gam[j];
                        gx[r * d + j] =
                            rstd[r] / dn * (dn * dh - sum_dh - hrow[j] * sum_dh_h);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), gx)?);
                self.accumulate(grads, *gamma, Tensor::new(vec![d], ggam)?);
                self.accumulate(grads, *beta, Tensor::new(vec![d], gbet)?);
            }
            Op::Conv1d { x, w, b, pad } => {
                let (gx, gw, gb) =
                    conv1d_backward(self.value(*x), self.value(*w), g, *pad)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *b, gb);
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (o, &p) in perm.iter().enumerate() {
                    inv[p] = o;
                }
                self.accumulate(grads, *a, g.permute(&inv)?);
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.clone().reshape(&shape)?);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    self.accumulate(grads, p, g.slice_last(start, start + w));
                    start += w;
                }
            }
            Op::Gather(table, index) => {
                let ts = self.shape(*table).to_vec();
                let cols = ts[1];
                let mut gt = vec![F::zero(); ts[0] * cols];
                for (r, &ix) in index.iter().enumerate() {
                    let src = &g.data()[r * cols..(r + 1) * cols];
                    for (acc, &v) in gt[ix * cols..(ix + 1) * cols].iter_mut().zip(src) {
                        *acc = *acc + v;
                    }
                }
                self.accumulate(grads, *table, Tensor::new(ts, gt)?);
            }
            Op::Broadcast(a, reps) => {
                let inner = self.value(*a).numel();
                let mut ga = vec![F::zero(); inner];
                for r in 0..*reps {
                    for (acc, &v) in ga.iter_mut().zip(&g.data()[r * inner..(r + 1) * inner]) {
                        *acc = *acc + v;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), ga)?);
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv));
            }
            Op::RfftRe(a, axis) => {
                let len = self.shape(*a)[*axis];
                self.accumulate(grads, *a, fft::rfft_adjoint(Some(g), None, *axis, len));
            }
            Op::RfftIm(a, axis) => {
                let len = self.shape(*a)[*axis];
                self.accumulate(grads, *a, fft::rfft_adjoint(None, Some(g), *axis, len));
            }
            Op::Irfft { re, im, axis } => {
                let len = g.shape()[*axis];
                debug_assert_eq!(self.shape(*re)[*axis], rfft_bins(len));
                let (gr, gi) = fft::irfft_adjoint(g, *axis, len);
                self.accumulate(grads, *re, gr);
                self.accumulate(grads, *im, gi);
            }
        }
        Ok(())
    }
}

fn matmul_backward<F: Real>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    g: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (d, _) = ops::matmul_dims(a.shape(), b.shape())?;
    let (m, k, n) = (d.m, d.k, d.n);
    let mut ga = vec![F::zero(); a.numel()];
    let mut gb = vec![F::zero(); b.numel()];
    let gd = g.data();

    // dA = dC · Bᵀ
    if d.a_batched && !d.b_batched {
        gemm_t(gd, false, b.data(), true, &mut ga, d.batch * m, n, k, false);
    } else {
        for bi in 0..d.batch {
            let bj = if d.b_batched { bi } else { 0 };
            let bs = &b.data()[bj * k * n..(bj + 1) * k * n];
            let gs = &gd[bi * m * n..(bi + 1) * m * n];
            let ai = if d.a_batched { bi } else { 0 };
            let dst = &mut ga[ai * m * k..(ai + 1) * m * k];
            gemm_t(gs, false, bs, true, dst, m, n, k, !d.a_batched && bi > 0);
        }
    }

    // dB = Aᵀ · dC
    if d.a_batched && !d.b_batched {
        gemm_t(a.data(), true, gd, false, &mut gb, k, d.batch * m, n, false);
    } else {
        for bi in 0..d.batch {
            let ai = if d.a_batched { bi } else { 0 };
            let as_ = &a.data()[ai * m * k..(ai + 1) * m * k];
            let gs = &gd[bi * m * n..(bi + 1) * m * n];
            let bj = if d.b_batched { bi } else { 0 };
            let dst = &mut gb[bj * k * n..(bj + 1) * k * n];
            gemm_t(as_, true, gs, false, dst, k, m, n, !d.b_batched && bi > 0);
        }
    }
    Ok((
        Tensor::new(a.shape().to_vec(), ga)?,
        Tensor::new(b.shape().to_vec(), gb)?,
    ))
}

fn conv1d_backward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    g: &Tensor<F>,
    pad: usize,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let bias_shape = [w.shape()[0]];
    let d = ops::conv_dims(x.shape(), w.shape(), &bias_shape, pad)?;
    let (xd, wd, gd) = (x.data(), w.data(), g.data());

    let mut gx = vec![F::zero(); x.numel()];
    gx.par_chunks_mut(d.cin * d.len)
        .enumerate()
        .for_each(|(bi, gxb)| {
            for o in 0..d.cout {
                let grow = &gd[(bi * d.cout + o) * d.out_len..(bi * d.cout + o + 1) * d.out_len];
                for c in 0..d.cin {
                    let gxrow = &mut gxb[c * d.len..(c + 1) * d.len];
                    for j in 0..d.kernel {
                        let wv = wd[(o * d.cin + c) * d.kernel + j];
                        let (t0, x0) = ops::tap_offsets(j, d.pad);
                        let span = d.out_len - t0;
                        for (gxv, &gv) in gxrow[x0..x0 + span].iter_mut().zip(&grow[t0..]) {
                            *gxv = *gxv + wv * gv;
                        }
                    }
                }
            }
        });

    let mut gw = vec![F::zero(); w.numel()];
    gw.par_chunks_mut(d.cin * d.kernel)
        .enumerate()
        .for_each(|(o, gwo)| {
            for bi in 0..d.batch {
                let grow = &gd[(bi * d.cout + o) * d.out_len..(bi * d.cout + o + 1) * d.out_len];
                for c in 0..d.cin {
                    let xrow = &xd[(bi * d.cin + c) * d.len..(bi * d.cin + c + 1) * d.len];
                    for j in 0..d.kernel {
                        let mut acc = gwo[c * d.kernel + j];
                        let (t0, x0) = ops::tap_offsets(j, d.pad);
                        let span = d.out_len - t0;
                        for (&gv, &xv) in grow[t0..].iter().zip(&xrow[x0..x0 + span]) {
                            acc = acc + gv * xv;
                        }
                        gwo[c * d.kernel + j] = acc;
                    }
                }
            }
        });

    let mut gb = vec![F::zero(); d.cout];
    for bi in 0..d.batch {
        for (o, acc) in gb.iter_mut().enumerate() {
            let grow = &gd[(bi * d.cout + o) * d.out_len..(bi * d.cout + o + 1) * d.out_len];
            *acc = *acc + grow.iter().copied().sum::<F>();
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![d.cout], gb)?,
    ))
}

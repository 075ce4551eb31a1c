//! Forward kernels on plain tensors. The autodiff tape calls into these and
//! adds the matching backward rules.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Logit substituted at masked positions before the max-subtracted softmax.
pub const MASKED_LOGIT: f64 = -1e9;

/// Below this many multiply-adds a kernel runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m×n] = a[m×k] · b[k×n]`, overwriting `out`.
pub(crate) fn gemm<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    gemm_t(a, false, b, false, out, m, k, n, false);
}

/// General product on row-major buffers. `ta` means `a` is stored as its
/// `k×m` transpose, `tb` likewise for `b` (`n×k`). With `accumulate` the
/// product is added to `out` instead of replacing it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_t<F: Real>(
    a: &[F],
    ta: bool,
    b: &[F],
    tb: bool,
    out: &mut [F],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.fill(F::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m) } else { (k, 1) };
    let (rsb, csb) = if tb { (1, k) } else { (n, 1) };
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: the asserts above pin each buffer to exactly the extent the
    // strides address, and `out` is a distinct &mut borrow.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batch layout of a product: how many matrices each side carries.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(MatmulDims, Vec<usize>)> {
    let err = || Error::Shape {
        op: "matmul",
        left: a.to_vec(),
        right: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let (lead_a, lead_b) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let lead = if lead_a == lead_b || lead_b.is_empty() {
        lead_a
    } else if lead_a.is_empty() {
        lead_b
    } else {
        return Err(err());
    };
    let batch: usize = lead.iter().product();
    let mut out = lead.to_vec();
    out.extend([m, n]);
    Ok((
        MatmulDims {
            batch,
            a_batched: !lead_a.is_empty(),
            b_batched: !lead_b.is_empty(),
            m,
            k,
            n,
        },
        out,
    ))
}

/// Matrix product over the trailing two axes, batched over leading axes.
///
/// Leading axes must either match or be absent on one side, in which case
/// that operand is shared across the batch.
pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (d, out_shape) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![F::zero(); d.batch * d.m * d.n];
    if d.a_batched && !d.b_batched {
        // Shared right operand: one tall product.
        gemm(a.data(), b.data(), &mut out, d.batch * d.m, d.k, d.n);
    } else {
        for (bi, chunk) in out.chunks_mut(d.m * d.n).enumerate() {
            let ai = if d.a_batched { bi } else { 0 };
            let bj = if d.b_batched { bi } else { 0 };
            gemm(
                &a.data()[ai * d.m * d.k..(ai + 1) * d.m * d.k],
                &b.data()[bj * d.k * d.n..(bj + 1) * d.k * d.n],
                chunk,
                d.m,
                d.k,
                d.n,
            );
        }
    }
    Tensor::new(out_shape, out)
}

fn mask_rows<F: Real>(logits: &Tensor<F>, mask: &Tensor<F>) -> Result<usize> {
    let (ls, ms) = (logits.shape(), mask.shape());
    if ms.len() > ls.len() || ls[ls.len() - ms.len()..] != *ms {
        return Err(Error::Shape {
            op: "masked_softmax",
            left: ls.to_vec(),
            right: ms.to_vec(),
        });
    }
    Ok(mask.numel() / ms[ms.len() - 1])
}

/// Softmax over the last axis; positions with `mask == 0` get exactly zero.
///
/// `mask` must match a suffix of the logits' shape and is broadcast over the
/// remaining leading axes. A row whose mask is entirely zero is an error.
pub fn masked_softmax_lastdim<F: Real>(
    logits: &Tensor<F>,
    mask: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let last = *logits.shape().last().ok_or_else(|| {
        Error::InvalidShape("softmax of a rank-0 tensor".into())
    })?;
    let m_rows = match mask {
        Some(m) => mask_rows(logits, m)?,
        None => 1,
    };
    let mut out = logits.data().to_vec();
    let neg = F::of(MASKED_LOGIT);
    for (r, row) in out.chunks_mut(last).enumerate() {
        let mrow = mask.map(|m| &m.data()[(r % m_rows) * last..(r % m_rows + 1) * last]);
        if let Some(mrow) = mrow {
            if mrow.iter().all(|&v| v == F::zero()) {
                return Err(Error::DegenerateRow { row: r });
            }
            for (v, &keep) in row.iter_mut().zip(mrow) {
                if keep == F::zero() {
                    *v = neg;
                }
            }
        }
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
        if let Some(mrow) = mrow {
            for (v, &keep) in row.iter_mut().zip(mrow) {
                if keep == F::zero() {
                    *v = F::zero();
                }
            }
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Normalized values and per-row reciprocal standard deviations, kept for
/// the backward pass.
pub(crate) struct LayerNormCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
}

pub(crate) fn layer_norm_forward<F: Real>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: f64,
) -> Result<(Tensor<F>, LayerNormCache<F>)> {
    let d = *x.shape().last().unwrap();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gamma.shape().to_vec(),
        });
    }
    let rows = x.numel() / d;
    let mut xhat = vec![F::zero(); x.numel()];
    let mut rstd = vec![F::zero(); rows];
    let mut out = vec![F::zero(); x.numel()];
    let dn = F::of(d as f64);
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
        let inv = F::one() / (var + F::of(eps)).sqrt();
        rstd[r] = inv;
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormCache { xhat, rstd },
    ))
}

/// Normalizes each last-axis slice to zero mean and unit variance, then
/// applies the affine `gamma`, `beta`.
pub fn layer_norm<F: Real>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: f64,
) -> Result<Tensor<F>> {
    layer_norm_forward(x, gamma, beta, eps).map(|(y, _)| y)
}

pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub len: usize,
    pub cout: usize,
    pub kernel: usize,
    pub pad: usize,
    pub out_len: usize,
}

pub(crate) fn conv_dims(x: &[usize], w: &[usize], b: &[usize], pad: usize) -> Result<ConvDims> {
    let err = || Error::Shape {
        op: "conv1d",
        left: x.to_vec(),
        right: w.to_vec(),
    };
    if x.len() != 3 || w.len() != 3 || x[1] != w[1] || b != [w[0]] {
        return Err(err());
    }
    let (len, kernel) = (x[2], w[2]);
    if kernel > len + pad {
        return Err(Error::InvalidShape(format!(
            "conv1d kernel {kernel} longer than padded input {}",
            len + pad
        )));
    }
    Ok(ConvDims {
        batch: x[0],
        cin: x[1],
        len,
        cout: w[0],
        kernel,
        pad,
        out_len: len + pad - kernel + 1,
    })
}

/// Stride-1 cross-correlation of `[batch, in, len]` with `[out, in, kernel]`,
/// zero-padding `left_pad` steps at the start of the sequence.
pub fn conv1d<F: Real>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    left_pad: usize,
) -> Result<Tensor<F>> {
    let d = conv_dims(x.shape(), weight.shape(), bias.shape(), left_pad)?;
    let mut out = vec![F::zero(); d.batch * d.cout * d.out_len];
    let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
    let per_batch = |(bi, ob): (usize, &mut [F])| {
        for o in 0..d.cout {
            let orow = &mut ob[o * d.out_len..(o + 1) * d.out_len];
            orow.iter_mut().for_each(|v| *v = bd[o]);
            for c in 0..d.cin {
                let xrow = &xd[(bi * d.cin + c) * d.len..(bi * d.cin + c + 1) * d.len];
                for j in 0..d.kernel {
                    let w = wd[(o * d.cin + c) * d.kernel + j];
                    let (t0, x0) = tap_offsets(j, d.pad);
                    let span = d.out_len - t0;
                    for (ov, &xv) in orow[t0..].iter_mut().zip(&xrow[x0..x0 + span]) {
                        *ov = *ov + w * xv;
                    }
                }
            }
        }
    };
    let work = d.batch * d.cout * d.cin * d.kernel * d.out_len;
    if work >= PAR_THRESHOLD {
        out.par_chunks_mut(d.cout * d.out_len).enumerate().for_each(per_batch);
    } else {
        out.chunks_mut(d.cout * d.out_len).enumerate().for_each(per_batch);
    }
    Tensor::new(vec![d.batch, d.cout, d.out_len], out)
}

/// First output step reached by tap `j` and the input step it reads there.
#[inline]
pub(crate) fn tap_offsets(j: usize, pad: usize) -> (usize, usize) {
    let t0 = pad.saturating_sub(j);
    (t0, t0 + j - pad)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu_scalar<F: Real>(x: F) -> F {
    let inner = F::of(GELU_C) * (x + F::of(GELU_A) * x * x * x);
    F::of(0.5) * x * (F::one() + tanh_via_exp(inner))
}

/// `tanh` through a single `exp`, several times cheaper than libm's
/// `tanhf`. Absolute error stays at rounding level; saturates cleanly when
/// `exp` overflows or underflows.
#[inline]
pub(crate) fn tanh_via_exp<F: Real>(x: F) -> F {
    let two = F::of(2.0);
    F::one() - two / ((two * x).exp() + F::one())
}

pub(crate) fn gelu_grad_scalar<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let th = tanh_via_exp(c * (x + a * x * x * x));
    let half = F::of(0.5);
    half * (F::one() + th)
        + half * x * (F::one() - th * th) * c * (F::one() + F::of(3.0) * a * x * x)
}

pub fn gelu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(gelu_scalar)
}

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Inverted dropout mask: each entry is `0` with probability `p`, else
/// `1/(1-p)`.
pub(crate) fn dropout_mask<F: Real, R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<F> {
    let keep = F::of(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
        .collect()
}

/// Inverted dropout. Identity when `training` is false or `p == 0`.
pub fn dropout<F: Real, R: Rng + ?Sized>(
    x: &Tensor<F>,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<F>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidShape(format!("dropout rate {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask: Vec<F> = dropout_mask(x.numel(), p, rng);
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn tanh_via_exp_matches_libm() {
        for i in -400..=400 {
            let x = i as f64 * 0.05;
            assert!((tanh_via_exp(x) - x.tanh()).abs() < 1e-15, "{x}");
            let xf = x as f32;
            assert!((tanh_via_exp(xf) - xf.tanh()).abs() < 1e-6, "{x}");
        }
        assert_eq!(tanh_via_exp(1e4f32), 1.0);
        assert_eq!(tanh_via_exp(-1e4f32), -1.0);
        assert!(tanh_via_exp(f32::NAN).is_nan());
    }

    #[test]
    fn matmul_small_cases() {
        let id = t(&[2, 2], &[1., 0., 0., 1.]);
        let b = t(&[2, 2], &[3., 4., 5., 6.]);
        assert_eq!(matmul(&id, &b).unwrap(), b);
        let r = matmul(&t(&[1, 2], &[1., 2.]), &t(&[2, 1], &[3., 4.])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[3, 4], 1);
        let b = random(&[4, 5], 2);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                assert!((c.at(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_broadcasts_shared_operand() {
        let a = random(&[2, 3, 4], 3);
        let b = random(&[4, 2], 4);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        let c1 = matmul(&a.index_leading(1), &b).unwrap();
        assert_eq!(c.index_leading(1), c1);
        let left = random(&[3, 3], 5);
        let d = matmul(&left, &a).unwrap();
        assert_eq!(d.index_leading(0), matmul(&left, &a.index_leading(0)).unwrap());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&random(&[2, 3], 0), &random(&[2, 3], 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matmul(&random(&[2, 2, 3], 0), &random(&[3, 3, 1], 0)).is_err());
    }

    #[test]
    fn masked_softmax_examples() {
        let y = masked_softmax_lastdim(&t(&[3], &[1., 1., 1.]), Some(&t(&[3], &[1., 0., 1.])))
            .unwrap();
        assert_eq!(y.data(), &[0.5, 0.0, 0.5]);
        let y = masked_softmax_lastdim(&t(&[2], &[0., 0.]), Some(&t(&[2], &[1., 1.]))).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);

        let logits = [5.0f64, -3.0, 2.0];
        let y = masked_softmax_lastdim(&t(&[3], &logits), Some(&t(&[3], &[1., 1., 1.]))).unwrap();
        let max = 5.0;
        let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (a, e) in y.data().iter().zip(&exps) {
            assert!((a - e / z).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_softmax_fully_masked_row_is_error() {
        let err = masked_softmax_lastdim(
            &t(&[2, 2], &[1., 2., 3., 4.]),
            Some(&t(&[2, 2], &[1., 0., 0., 0.])),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { row: 1 }));
    }

    #[test]
    fn layer_norm_examples() {
        let one = t(&[4], &[1.; 4]);
        let zero = t(&[4], &[0.; 4]);
        let y = layer_norm(&t(&[4], &[1., 1., 1., 1.]), &one, &zero, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0; 4]);

        let y = layer_norm(&t(&[2], &[-1., 1.]), &t(&[2], &[1., 1.]), &t(&[2], &[0., 0.]), 1e-5)
            .unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);

        let x = [1.0, 2.0, 3.0];
        let y = layer_norm(&t(&[3], &x), &t(&[3], &[2.; 3]), &t(&[3], &[1.; 3]), 1e-5).unwrap();
        let mean = 2.0;
        let var = 2.0 / 3.0;
        for (a, v) in y.data().iter().zip(x) {
            let oracle = (v - mean) / (var + 1e-5f64).sqrt() * 2.0 + 1.0;
            assert!((a - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_examples() {
        let x = t(&[1, 1, 3], &[1., 2., 3.]);
        let y = conv1d(&x, &t(&[1, 1, 2], &[1., 1.]), &t(&[1], &[0.]), 0).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);

        let x = random(&[2, 3, 5], 9);
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let y = conv1d(&x, &t(&[3, 3, 1], &w), &t(&[3], &[0.; 3]), 0).unwrap();
        assert_eq!(y, x);

        assert!(conv1d(&t(&[1, 1, 2], &[1., 2.]), &t(&[1, 1, 3], &[1.; 3]), &t(&[1], &[0.]), 0)
            .is_err());
    }

    #[test]
    fn conv1d_matches_loop_oracle_with_padding() {
        let (b, cin, len, cout, k, pad) = (2, 3, 6, 4, 3, 2);
        let x = random(&[b, cin, len], 11);
        let w = random(&[cout, cin, k], 12);
        let bias = random(&[cout], 13);
        let y = conv1d(&x, &w, &bias, pad).unwrap();
        let out_len = len + pad - k + 1;
        assert_eq!(y.shape(), &[b, cout, out_len]);
        for bi in 0..b {
            for o in 0..cout {
                for tt in 0..out_len {
                    let mut s = bias.data()[o];
                    for c in 0..cin {
                        for j in 0..k {
                            let src = tt as isize + j as isize - pad as isize;
                            if src >= 0 {
                                s += w.at(&[o, c, j]) * x.at(&[bi, c, src as usize]);
                            }
                        }
                    }
                    assert!((y.at(&[bi, o, tt]) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gelu_and_dropout_basics() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        // tanh approximation stays within 1e-3 of the erf form on [-4, 4]
        for i in -40..=40 {
            let x = i as f64 / 10.0;
            let exact = 0.5 * x * (1.0 + erf(x / 2f64.sqrt()));
            assert!((gelu_scalar(x) - exact).abs() < 1e-3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&[10], 1);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
    }

    #[test]
    fn dropout_expectation_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let one = t(&[1], &[1.0]);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| dropout(&one, 0.5, true, &mut rng).unwrap().data()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    /// Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
    fn erf(x: f64) -> f64 {
        let s = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        s * y
    }
}

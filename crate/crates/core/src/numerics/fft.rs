//! Real FFT along one axis of a tensor.
//!
//! Forward transforms are unnormalized; the inverse carries the `1/len`
//! factor, so `irfft(rfft(x), len) == x`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::{ComplexTensor, Real, Tensor};

/// Number of non-redundant bins of a real signal of length `len`.
pub fn rfft_bins(len: usize) -> usize {
    len / 2 + 1
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Gathers every 1-D line along `axis` into a contiguous complex buffer,
/// transforms it, and returns the buffer (`outer * inner` lines of `len`).
fn transform_lines<F: Real>(
    lines: usize,
    len: usize,
    inverse: bool,
    fill: impl Fn(&mut [Complex<F>], usize),
) -> Vec<Complex<F>> {
    let mut buf = vec![Complex::new(F::zero(), F::zero()); lines * len];
    for (line, chunk) in buf.chunks_mut(len).enumerate() {
        fill(chunk, line);
    }
    let mut planner = FftPlanner::<F>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    };
    fft.process(&mut buf);
    buf
}

/// Real-to-complex FFT along `axis`; the axis shrinks to `len/2 + 1` bins.
pub fn rfft_axis<F: Real>(x: &Tensor<F>, axis: usize) -> Result<ComplexTensor<F>> {
    if axis >= x.ndim() {
        return Err(Error::InvalidShape(format!(
            "rfft axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let bins = rfft_bins(len);
    let data = x.data();
    let spec = transform_lines(outer * inner, len, false, |chunk, line| {
        let (o, i) = (line / inner, line % inner);
        for (t, c) in chunk.iter_mut().enumerate() {
            *c = Complex::new(data[(o * len + t) * inner + i], F::zero());
        }
    });
    let mut shape = x.shape().to_vec();
    shape[axis] = bins;
    let mut re = vec![F::zero(); outer * bins * inner];
    let mut im = vec![F::zero(); outer * bins * inner];
    for line in 0..outer * inner {
        let (o, i) = (line / inner, line % inner);
        for k in 0..bins {
            let c = spec[line * len + k];
            re[(o * bins + k) * inner + i] = c.re;
            im[(o * bins + k) * inner + i] = c.im;
        }
    }
    ComplexTensor::new(Tensor::new(shape.clone(), re)?, Tensor::new(shape, im)?)
}

/// Complex-to-real inverse FFT along `axis`, restoring `len` samples.
///
/// Imaginary parts of the DC bin (and of the Nyquist bin for even `len`)
/// do not contribute, matching the usual half-spectrum convention.
pub fn irfft_axis<F: Real>(z: &ComplexTensor<F>, axis: usize, len: usize) -> Result<Tensor<F>> {
    let shape = z.shape();
    if axis >= shape.len() {
        return Err(Error::InvalidShape(format!(
            "irfft axis {axis} out of range for {shape:?}"
        )));
    }
    let bins = rfft_bins(len);
    if len == 0 || shape[axis] != bins {
        return Err(Error::InvalidShape(format!(
            "irfft: {} bins inconsistent with length {len} (expected {bins})",
            shape[axis]
        )));
    }
    let (outer, _, inner) = split_axis(shape, axis);
    let (re, im) = (z.real.data(), z.imag.data());
    let out = transform_lines(outer * inner, len, true, |chunk, line| {
        let (o, i) = (line / inner, line % inner);
        for k in 0..bins {
            let at = (o * bins + k) * inner + i;
            let self_conjugate = k == 0 || (len % 2 == 0 && k == len / 2);
            let c = Complex::new(re[at], if self_conjugate { F::zero() } else { im[at] });
            chunk[k] = c;
            if k != 0 && k != len - k {
                chunk[len - k] = c.conj();
            }
        }
    });
    let scale = F::one() / F::of(len as f64);
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut data = vec![F::zero(); outer * len * inner];
    for line in 0..outer * inner {
        let (o, i) = (line / inner, line % inner);
        for t in 0..len {
            data[(o * len + t) * inner + i] = out[line * len + t].re * scale;
        }
    }
    Tensor::new(out_shape, data)
}

/// FFT over the second-to-last axis of `[..., len, feat]`.
pub fn rfft_time<F: Real>(x: &Tensor<F>) -> Result<ComplexTensor<F>> {
    if x.ndim() < 2 {
        return Err(Error::InvalidShape("rfft_time needs rank >= 2".into()));
    }
    rfft_axis(x, x.ndim() - 2)
}

pub fn irfft_time<F: Real>(z: &ComplexTensor<F>, len: usize) -> Result<Tensor<F>> {
    let nd = z.shape().len();
    if nd < 2 {
        return Err(Error::InvalidShape("irfft_time needs rank >= 2".into()));
    }
    irfft_axis(z, nd - 2, len)
}

/// Adjoint of [`rfft_axis`]: maps cotangents of the real and imaginary
/// bins back onto the time-domain input.
pub(crate) fn rfft_adjoint<F: Real>(
    grad_re: Option<&Tensor<F>>,
    grad_im: Option<&Tensor<F>>,
    axis: usize,
    len: usize,
) -> Tensor<F> {
    let shape = grad_re.or(grad_im).expect("at least one cotangent").shape();
    let bins = rfft_bins(len);
    let (outer, _, inner) = split_axis(shape, axis);
    let out = transform_lines(outer * inner, len, true, |chunk, line| {
        let (o, i) = (line / inner, line % inner);
        for (k, c) in chunk.iter_mut().enumerate().take(bins) {
            let at = (o * bins + k) * inner + i;
            let r = grad_re.map_or(F::zero(), |g| g.data()[at]);
            let m = grad_im.map_or(F::zero(), |g| g.data()[at]);
            *c = Complex::new(r, m);
        }
    });
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut data = vec![F::zero(); outer * len * inner];
    for line in 0..outer * inner {
        let (o, i) = (line / inner, line % inner);
        for t in 0..len {
            data[(o * len + t) * inner + i] = out[line * len + t].re;
        }
    }
    Tensor::new(out_shape, data).expect("adjoint shape")
}

/// Adjoint of [`irfft_axis`]: returns cotangents for the real and imaginary
/// half-spectrum.
pub(crate) fn irfft_adjoint<F: Real>(
    grad: &Tensor<F>,
    axis: usize,
    len: usize,
) -> (Tensor<F>, Tensor<F>) {
    let bins = rfft_bins(len);
    let (outer, _, inner) = split_axis(grad.shape(), axis);
    let g = grad.data();
    let spec = transform_lines(outer * inner, len, false, |chunk, line| {
        let (o, i) = (line / inner, line % inner);
        for (t, c) in chunk.iter_mut().enumerate() {
            *c = Complex::new(g[(o * len + t) * inner + i], F::zero());
        }
    });
    let mut shape = grad.shape().to_vec();
    shape[axis] = bins;
    let mut re = vec![F::zero(); outer * bins * inner];
    let mut im = vec![F::zero(); outer * bins * inner];
    let inv_len = F::one() / F::of(len as f64);
    for line in 0..outer * inner {
        let (o, i) = (line / inner, line % inner);
        for k in 0..bins {
            let weight = if k == 0 || (len % 2 == 0 && k == len / 2) {
                inv_len
            } else {
                inv_len + inv_len
            };
            let c = spec[line * len + k];
            re[(o * bins + k) * inner + i] = c.re * weight;
            im[(o * bins + k) * inner + i] = c.im * weight;
        }
    }
    (
        Tensor::new(shape.clone(), re).expect("adjoint shape"),
        Tensor::new(shape, im).expect("adjoint shape"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// O(len^2) direct DFT along the time axis of `[len, feat]`.
    fn direct_dft(x: &[f64], len: usize, feat: usize) -> (Vec<f64>, Vec<f64>) {
        let bins = len / 2 + 1;
        let mut re = vec![0.0; bins * feat];
        let mut im = vec![0.0; bins * feat];
        for k in 0..bins {
            for f in 0..feat {
                for t in 0..len {
                    let th = 2.0 * PI * (k * t) as f64 / len as f64;
                    re[k * feat + f] += x[t * feat + f] * th.cos();
                    im[k * feat + f] -= x[t * feat + f] * th.sin();
                }
            }
        }
        (re, im)
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn constant_series_is_dc_only() {
        let c = 2.5;
        let x = Tensor::<f64>::full(&[8, 1], c);
        let z = rfft_time(&x).unwrap();
        assert_eq!(z.shape(), &[5, 1]);
        assert!((z.real.data()[0] - c * 8.0).abs() < 1e-12);
        for k in 1..5 {
            assert!(z.real.data()[k].abs() < 1e-12);
            assert!(z.imag.data()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_dft() {
        for len in [5usize, 11, 12] {
            let feat = 3;
            let raw = pseudo_random(len * feat, len as u64);
            let x = Tensor::<f64>::from_f64(&[len, feat], &raw).unwrap();
            let z = rfft_time(&x).unwrap();
            let (re, im) = direct_dft(&raw, len, feat);
            for (a, b) in z.real.data().iter().zip(&re) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in z.imag.data().iter().zip(&im) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cosine_energy_in_its_bin() {
        let len = 12;
        let k0 = 3;
        let raw: Vec<f64> = (0..len)
            .map(|t| (2.0 * PI * (k0 * t) as f64 / len as f64).cos())
            .collect();
        let x = Tensor::<f64>::from_f64(&[len, 1], &raw).unwrap();
        let z = rfft_time(&x).unwrap();
        let (re, im) = direct_dft(&raw, len, 1);
        for k in 0..rfft_bins(len) {
            let mag = z.real.data()[k].hypot(z.imag.data()[k]);
            let oracle = re[k].hypot(im[k]);
            assert!((mag - oracle).abs() < 1e-10);
            if k == k0 {
                assert!((mag - len as f64 / 2.0).abs() < 1e-10);
            } else {
                assert!(mag < 1e-10);
            }
        }
    }

    #[test]
    fn round_trip_both_parities_f64_and_f32() {
        for len in [11usize, 12] {
            let raw = pseudo_random(len * 4, 7 + len as u64);
            let x = Tensor::<f64>::from_f64(&[2, len, 2], &raw).unwrap();
            let back = irfft_time(&rfft_time(&x).unwrap(), len).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-10);
            let x32: Tensor<f32> = x.cast();
            let back32 = irfft_time(&rfft_time(&x32).unwrap(), len).unwrap();
            assert!(back32.max_abs_diff(&x32) < 1e-4);
        }
    }

    #[test]
    fn rejects_inconsistent_bins() {
        let z = ComplexTensor::new(Tensor::<f64>::zeros(&[6, 1]), Tensor::zeros(&[6, 1])).unwrap();
        assert!(irfft_time(&z, 10).is_ok());
        assert!(irfft_time(&z, 11).is_ok());
        assert!(irfft_time(&z, 12).is_err());
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        // <rfft(x), g> == <x, rfft^T(g)> and <irfft(z), h> == <z, irfft^T(h)>.
        for len in [7usize, 8] {
            let bins = rfft_bins(len);
            let x = Tensor::<f64>::from_f64(&[len, 2], &pseudo_random(len * 2, 1)).unwrap();
            let gr = Tensor::<f64>::from_f64(&[bins, 2], &pseudo_random(bins * 2, 2)).unwrap();
            let gi = Tensor::<f64>::from_f64(&[bins, 2], &pseudo_random(bins * 2, 3)).unwrap();
            let z = rfft_axis(&x, 0).unwrap();
            let lhs: f64 = z.real.data().iter().zip(gr.data()).map(|(a, b)| a * b).sum::<f64>()
                + z.imag.data().iter().zip(gi.data()).map(|(a, b)| a * b).sum::<f64>();
            let adj = rfft_adjoint(Some(&gr), Some(&gi), 0, len);
            let rhs: f64 = x.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);

            let h = Tensor::<f64>::from_f64(&[len, 2], &pseudo_random(len * 2, 4)).unwrap();
            let zc = ComplexTensor::new(gr.clone(), gi.clone()).unwrap();
            let y = irfft_axis(&zc, 0, len).unwrap();
            let lhs: f64 = y.data().iter().zip(h.data()).map(|(a, b)| a * b).sum();
            let (ar, ai) = irfft_adjoint(&h, 0, len);
            let rhs: f64 = gr.data().iter().zip(ar.data()).map(|(a, b)| a * b).sum::<f64>()
                + gi.data().iter().zip(ai.data()).map(|(a, b)| a * b).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}

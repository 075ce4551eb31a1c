use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::{Real, Tensor};

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    XavierUniform,
    KaimingUniform,
    Orthogonal,
    XavierNormal,
}

impl InitScheme {
    pub const ALL: [InitScheme; 4] = [
        InitScheme::XavierUniform,
        InitScheme::KaimingUniform,
        InitScheme::Orthogonal,
        InitScheme::XavierNormal,
    ];
}

/// Fan-in / fan-out used to scale an initializer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fans {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Fans {
    pub fn new(fan_in: usize, fan_out: usize) -> Self {
        Fans { fan_in, fan_out }
    }
}

pub fn init_tensor<F: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fans: Fans,
    scheme: InitScheme,
    rng: &mut R,
) -> Tensor<F> {
    let (fi, fo) = (fans.fan_in.max(1) as f64, fans.fan_out.max(1) as f64);
    match scheme {
        InitScheme::XavierUniform => {
            let bound = (6.0 / (fi + fo)).sqrt();
            uniform(shape, bound, rng)
        }
        InitScheme::KaimingUniform => {
            // gain sqrt(2) for ReLU: bound = sqrt(2) * sqrt(3 / fan_in)
            let bound = (6.0 / fi).sqrt();
            uniform(shape, bound, rng)
        }
        InitScheme::XavierNormal => {
            let std = (2.0 / (fi + fo)).sqrt();
            Tensor::from_fn(shape, |_| {
                let z: f64 = StandardNormal.sample(rng);
                F::of(z * std)
            })
        }
        InitScheme::Orthogonal => orthogonal(shape, rng),
    }
}

fn uniform<F: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::of(rng.random_range(-bound..=bound)))
}

/// Semi-orthogonal matrix over `shape[0] × prod(shape[1..])`.
fn orthogonal<F: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<F> {
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product::<usize>().max(1);
    let (tall, wide) = (rows.max(cols), rows.min(cols));
    // Columns of a tall Gaussian matrix, orthonormalized.
    let mut q: Vec<Vec<f64>> = (0..wide)
        .map(|_| (0..tall).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..wide {
        for i in 0..j {
            let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let qi = q[i].clone();
            for (v, u) in q[j].iter_mut().zip(&qi) {
                *v -= dot * u;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut data = vec![F::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // tall×wide Q; transpose when the target is wide.
            let v = if rows >= cols { q[c][r] } else { q[r][c] };
            data[r * cols + c] = F::of(v);
        }
    }
    Tensor::new(shape.to_vec(), data).expect("orthogonal shape")
}

#![allow(dead_code)]

use dwafm::config::{RunConfig, Variant};
use dwafm::data::synthetic::SyntheticSpec;
use dwafm::data::{Batch, Dataset, NormStats, PredefinedGraph};
use dwafm::numerics::rng::{stream_rng, Stream};
use dwafm::numerics::{Real, Tensor};
use dwafm::{DwafmModel, ModelConfig};
use rand::Rng;

pub fn uniform<F: Real>(shape: &[usize], seed: u64) -> Tensor<F> {
    let mut rng = stream_rng(seed, Stream::Synthetic, 999);
    Tensor::from_fn(shape, |_| F::of(rng.random_range(-1.0..1.0)))
}

pub fn ring(n: usize) -> PredefinedGraph {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
    PredefinedGraph::from_edges(n, &edges).unwrap()
}

pub fn path(n: usize) -> PredefinedGraph {
    let edges: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1, 1.0)).collect();
    PredefinedGraph::from_edges(n, &edges).unwrap()
}

pub fn config(variant: Variant, n: usize, t: usize, tf: usize, d_f: usize) -> ModelConfig {
    let mut cfg = RunConfig::default().model_config(n, 24);
    cfg.t_in = t;
    cfg.t_out = tf;
    cfg.d_f = d_f;
    cfg.variant = variant;
    cfg.dropout = 0.0;
    cfg
}

/// A random batch with valid calendar indices for `cfg`.
pub fn batch<F: Real>(cfg: &ModelConfig, bsz: usize, seed: u64) -> Batch<F> {
    let (t, n, tf) = (cfg.t_in, cfg.n_nodes, cfg.t_out);
    let x_raw = uniform::<F>(&[bsz, t, n], seed).map(|v| v * F::of(10.0) + F::of(50.0));
    let x = x_raw
        .map(|v| (v - F::of(50.0)) / F::of(10.0))
        .reshape(&[bsz, t, n, 1])
        .unwrap();
    let y = uniform::<F>(&[bsz, tf, n], seed + 1).map(|v| v * F::of(10.0) + F::of(50.0));
    let tod = (0..bsz * t).map(|i| (i * 5 + 3) % cfg.steps_per_day).collect();
    let dow = (0..bsz * t).map(|i| (i / 7) % 7).collect();
    Batch {
        x,
        x_raw,
        tod,
        dow,
        y,
    }
}

pub fn model<F: Real>(cfg: ModelConfig, graph: &PredefinedGraph, seed: u64) -> DwafmModel<F> {
    DwafmModel::new(cfg, graph, NormStats { mean: 50.0, std: 10.0 }, seed).unwrap()
}

/// Small synthetic dataset: 6 nodes, hourly samples, 400 steps.
pub fn small_dataset(t: usize, tf: usize) -> Dataset {
    let spec = SyntheticSpec {
        n_nodes: 6,
        len: 400,
        sample_rate_minutes: 60,
        fast_period: 6,
        ..SyntheticSpec::default()
    };
    let (series, graph) = spec.generate().unwrap();
    Dataset::new(&series, graph, t, tf, [6, 2, 2]).unwrap()
}

/// Quick-training run config on [`small_dataset`]-sized synthetic data.
pub fn quick_run(epochs: usize) -> RunConfig {
    RunConfig::with_overrides(
        "",
        &[
            "model.d_f=4".into(),
            "model.t_in=6".into(),
            "model.t_out=3".into(),
            "synthetic.n_nodes=5".into(),
            "synthetic.len=240".into(),
            "synthetic.sample_rate_minutes=60".into(),
            "synthetic.fast_period=6".into(),
            "train.batch_size=16".into(),
            format!("train.epochs={epochs}"),
            "train.lr=0.005".into(),
        ],
    )
    .unwrap()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y} (tol {tol})");
    }
}

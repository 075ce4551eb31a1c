use std::ops::Range;

use super::graph::PredefinedGraph;
use super::meta::{Calendar, DAYS_PER_WEEK};
use super::series::RawSeries;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Number of sliding windows with `t_in` inputs and `t_out` targets.
pub fn window_count(len: usize, t_in: usize, t_out: usize) -> Result<usize> {
    let needed = t_in + t_out;
    if t_in == 0 || t_out == 0 || len < needed {
        return Err(Error::SeriesTooShort { len, needed });
    }
    Ok(len - needed + 1)
}

/// Chronological partition of `n` windows by integer ratios. Train and
/// validation take the floor of their share, test takes the remainder.
pub fn split_counts(n: usize, ratios: [u32; 3]) -> Result<[usize; 3]> {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    if total == 0 {
        return Err(Error::Config("split ratios sum to zero".into()));
    }
    let share = |r: u32| ((n as u64 * r as u64) / total) as usize;
    let (train, val) = (share(ratios[0]), share(ratios[1]));
    Ok([train, val, n - train - val])
}

/// Scalar z-score statistics of the traffic channel.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Population mean and standard deviation of `values`.
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Err(Error::DegenerateStats(0.0));
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::DegenerateStats(std));
        }
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One window, materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<F> {
    /// Normalized inputs `[T, N, 1]`.
    pub x: Tensor<F>,
    pub tod_idx: Vec<usize>,
    pub dow_idx: Vec<usize>,
    /// Physical targets `[T_f, N]`.
    pub y: Tensor<F>,
}

/// A stack of windows ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<F> {
    /// Normalized inputs `[B, T, N, 1]`.
    pub x: Tensor<F>,
    /// Physical inputs `[B, T, N]`.
    pub x_raw: Tensor<F>,
    /// Time-of-day slot per `(b, t)`, length `B * T`.
    pub tod: Vec<usize>,
    /// Day-of-week per `(b, t)`, length `B * T`.
    pub dow: Vec<usize>,
    /// Physical targets `[B, T_f, N]`.
    pub y: Tensor<F>,
}

impl<F: Real> Batch<F> {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Windowed, split and normalized view of one series. Windows are produced
/// lazily from the underlying buffer.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Physical traffic channel, `[L * N]`.
    values: Vec<f32>,
    len: usize,
    n_nodes: usize,
    calendar: Calendar,
    t_in: usize,
    t_out: usize,
    stats: NormStats,
    counts: [usize; 3],
    pub graph: PredefinedGraph,
}

impl Dataset {
    /// Windows the first channel of `series`, splits it by `ratios` and fits
    /// normalization statistics on the input steps of the training windows.
    pub fn new(
        series: &RawSeries,
        graph: PredefinedGraph,
        t_in: usize,
        t_out: usize,
        ratios: [u32; 3],
    ) -> Result<Self> {
        if graph.n_nodes() != series.n_nodes() {
            return Err(Error::Adjacency {
                line: 0,
                msg: format!(
                    "graph has {} nodes, series has {}",
                    graph.n_nodes(),
                    series.n_nodes()
                ),
            });
        }
        let n = window_count(series.len(), t_in, t_out)?;
        let counts = split_counts(n, ratios)?;
        if counts[0] == 0 {
            return Err(Error::SeriesTooShort {
                len: series.len(),
                needed: t_in + t_out + 1,
            });
        }
        let values = series.channel(0);
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Metadata(format!(
                "non-finite value at step {}, node {}",
                i / series.n_nodes(),
                i % series.n_nodes()
            )));
        }
        let n_nodes = series.n_nodes();
        let stat_steps = counts[0] + t_in - 1;
        let stats = NormStats::fit(values[..stat_steps * n_nodes].iter().map(|&v| v as f64))?;
        Ok(Dataset {
            values,
            len: series.len(),
            n_nodes,
            calendar: series.meta.calendar()?,
            t_in,
            t_out,
            stats,
            counts,
            graph,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn t_in(&self) -> usize {
        self.t_in
    }

    pub fn t_out(&self) -> usize {
        self.t_out
    }

    pub fn series_len(&self) -> usize {
        self.len
    }

    pub fn stats(&self) -> NormStats {
        self.stats
    }

    pub fn calendar(&self) -> Calendar {
        self.calendar
    }

    pub fn steps_per_day(&self) -> usize {
        self.calendar.steps_per_day()
    }

    pub fn days_per_week(&self) -> usize {
        DAYS_PER_WEEK
    }

    pub fn n_windows(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        self.counts
    }

    /// Window indices (window start steps) belonging to `split`.
    pub fn split_range(&self, split: Split) -> Range<usize> {
        let [a, b, _] = self.counts;
        match split {
            Split::Train => 0..a,
            Split::Val => a..a + b,
            Split::Test => a + b..self.n_windows(),
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.split_range(split).collect()
    }

    /// Physical traffic value at `(step, node)`.
    pub fn value(&self, step: usize, node: usize) -> f32 {
        self.values[step * self.n_nodes + node]
    }

    pub fn sample<F: Real>(&self, window: usize) -> Sample<F> {
        let b = self.batch::<F>(&[window]);
        let (t, n) = (self.t_in, self.n_nodes);
        Sample {
            x: b.x.reshape(&[t, n, 1]).expect("shape"),
            tod_idx: b.tod,
            dow_idx: b.dow,
            y: b.y.reshape(&[self.t_out, n]).expect("shape"),
        }
    }

    /// Materializes the windows starting at `windows`.
    pub fn batch<F: Real>(&self, windows: &[usize]) -> Batch<F> {
        let (t, tf, n) = (self.t_in, self.t_out, self.n_nodes);
        let bsz = windows.len();
        let mut x = Vec::with_capacity(bsz * t * n);
        let mut x_raw = Vec::with_capacity(bsz * t * n);
        let mut y = Vec::with_capacity(bsz * tf * n);
        let mut tod = Vec::with_capacity(bsz * t);
        let mut dow = Vec::with_capacity(bsz * t);
        for &w in windows {
            assert!(w < self.n_windows(), "window {w} out of range");
            let input = &self.values[w * n..(w + t) * n];
            x_raw.extend(input.iter().map(|&v| F::of(v as f64)));
            x.extend(input.iter().map(|&v| F::of(self.stats.normalize(v as f64))));
            y.extend(
                self.values[(w + t) * n..(w + t + tf) * n]
                    .iter()
                    .map(|&v| F::of(v as f64)),
            );
            for s in w..w + t {
                tod.push(self.calendar.time_of_day(s));
                dow.push(self.calendar.day_of_week(s));
            }
        }
        Batch {
            x: Tensor::new(vec![bsz, t, n, 1], x).expect("batch shape"),
            x_raw: Tensor::new(vec![bsz, t, n], x_raw).expect("batch shape"),
            tod,
            dow,
            y: Tensor::new(vec![bsz, tf, n], y).expect("batch shape"),
        }
    }
}

use serde::{Deserialize, Serialize};

use super::metrics::{MetricSums, MetricsReport};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Historical-inertia forecast rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiMode {
    /// Forecast step `k` is input step `k` of the same window.
    #[default]
    CopyWindow,
    /// Forecast step `k` is the observation exactly one day earlier.
    LastDay,
}

/// Training-free baseline on the listed windows.
pub fn hi_baseline(data: &Dataset, windows: &[usize], mode: HiMode) -> Result<MetricsReport> {
    let (t, tf, n) = (data.t_in(), data.t_out(), data.n_nodes());
    if mode == HiMode::CopyWindow && t != tf {
        return Err(Error::Unsupported(format!(
            "copying the input window needs T == T_f, got {t} and {tf}"
        )));
    }
    let day = data.steps_per_day();
    let mut sums = MetricSums::default();
    for chunk in windows.chunks(256) {
        let batch = data.batch::<f64>(chunk);
        let pred = match mode {
            HiMode::CopyWindow => batch.x_raw.clone().reshape(&[chunk.len(), tf, n])?,
            HiMode::LastDay => {
                let mut v = Vec::with_capacity(chunk.len() * tf * n);
                for &w in chunk {
                    let first = w + t;
                    if first < day {
                        return Err(Error::Unsupported(format!(
                            "window {w} has no observation one day before its targets"
                        )));
                    }
                    for k in 0..tf {
                        for i in 0..n {
                            v.push(data.value(first + k - day, i) as f64);
                        }
                    }
                }
                Tensor::new(vec![chunk.len(), tf, n], v)?
            }
        };
        sums.add(&pred, &batch.y);
    }
    sums.report()
}

pub fn hi_baseline_split(data: &Dataset, split: Split, mode: HiMode) -> Result<MetricsReport> {
    hi_baseline(data, &data.indices(split), mode)
}

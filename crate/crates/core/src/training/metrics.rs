use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::DwafmModel;
use crate::numerics::{Real, Tape, Tensor, Var};

/// Targets with magnitude at or below this are excluded from loss and metrics.
pub const ZERO_THRESHOLD: f64 = 1e-4;

pub fn is_observed(target: f64) -> bool {
    target.abs() > ZERO_THRESHOLD
}

/// Masked mean absolute error recorded on `tape`. All-masked targets give 0.
pub fn masked_mae_loss<F: Real>(tape: &mut Tape<F>, pred: Var, target: &Tensor<F>) -> Result<Var> {
    let mask = target.map(|v| if is_observed(v.f64()) { F::one() } else { F::zero() });
    let count = mask.data().iter().filter(|&&m| m > F::zero()).count();
    let t = tape.constant(target.clone());
    let m = tape.constant(mask);
    let diff = tape.sub(pred, t)?;
    let abs = tape.abs(diff);
    let masked = tape.mul(abs, m)?;
    let total = tape.sum(masked);
    let inv = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    Ok(tape.scale(total, F::of(inv)))
}

/// Error sums over observed entries; merged in a fixed order so results do
/// not depend on thread scheduling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricSums {
    pub abs: f64,
    pub sq: f64,
    pub pct: f64,
    pub count: u64,
    /// Per forecast step.
    pub horizon: Vec<(f64, f64, f64, u64)>,
}

impl MetricSums {
    /// Adds `[B, T_f, N]` predictions against targets of the same shape.
    pub fn add<F: Real>(&mut self, pred: &Tensor<F>, target: &Tensor<F>) {
        let s = target.shape();
        let (tf, n) = (s[1], s[2]);
        if self.horizon.len() < tf {
            self.horizon.resize(tf, (0.0, 0.0, 0.0, 0));
        }
        for (i, (&p, &y)) in pred.data().iter().zip(target.data()).enumerate() {
            let (p, y) = (p.f64(), y.f64());
            if !is_observed(y) {
                continue;
            }
            let e = (p - y).abs();
            let h = &mut self.horizon[(i / n) % tf];
            h.0 += e;
            h.1 += e * e;
            h.2 += e / y.abs();
            h.3 += 1;
        }
        self.abs = self.horizon.iter().map(|h| h.0).sum();
        self.sq = self.horizon.iter().map(|h| h.1).sum();
        self.pct = self.horizon.iter().map(|h| h.2).sum();
        self.count = self.horizon.iter().map(|h| h.3).sum();
    }

    pub fn merge(&mut self, other: &MetricSums) {
        if self.horizon.len() < other.horizon.len() {
            self.horizon.resize(other.horizon.len(), (0.0, 0.0, 0.0, 0));
        }
        for (a, b) in self.horizon.iter_mut().zip(&other.horizon) {
            a.0 += b.0;
            a.1 += b.1;
            a.2 += b.2;
            a.3 += b.3;
        }
        self.abs = self.horizon.iter().map(|h| h.0).sum();
        self.sq = self.horizon.iter().map(|h| h.1).sum();
        self.pct = self.horizon.iter().map(|h| h.2).sum();
        self.count = self.horizon.iter().map(|h| h.3).sum();
    }

    pub fn report(&self) -> Result<MetricsReport> {
        if self.count == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let metrics = |abs: f64, sq: f64, pct: f64, c: u64| {
            let c = c.max(1) as f64;
            (abs / c, (sq / c).sqrt(), 100.0 * pct / c)
        };
        let (mae, rmse, mape_pct) = metrics(self.abs, self.sq, self.pct, self.count);
        Ok(MetricsReport {
            mae,
            rmse,
            mape_pct,
            count: self.count,
            per_horizon: self
                .horizon
                .iter()
                .map(|&(a, s, p, c)| {
                    let (mae, rmse, mape_pct) = metrics(a, s, p, c);
                    HorizonMetrics { mae, rmse, mape_pct }
                })
                .collect(),
            wall_seconds_per_epoch: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape_pct: f64,
}

/// Masked MAE, RMSE and MAPE (percent) in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    pub mape_pct: f64,
    /// Observed entries the metrics average over.
    pub count: u64,
    pub per_horizon: Vec<HorizonMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds_per_epoch: Option<f64>,
}

/// Metrics of a single prediction against its target.
pub fn metrics_of<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> Result<MetricsReport> {
    let mut s = MetricSums::default();
    s.add(pred, target);
    s.report()
}

/// Evaluates `model` on the given windows, `batch_size` at a time. The
/// windows are visited in sorted order so the result does not depend on the
/// order they are listed in.
pub fn evaluate<F: Real>(
    model: &DwafmModel<F>,
    data: &Dataset,
    windows: &[usize],
    batch_size: usize,
) -> Result<MetricsReport> {
    let mut sorted = windows.to_vec();
    sorted.sort_unstable();
    if sorted.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let parts: Vec<Result<MetricSums>> = sorted
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let batch = data.batch::<F>(chunk);
            let pred = model.predict(&batch)?;
            let mut s = MetricSums::default();
            s.add(&pred, &batch.y);
            Ok(s)
        })
        .collect();
    let mut total = MetricSums::default();
    for p in parts {
        total.merge(&p?);
    }
    total.report()
}

pub fn evaluate_split<F: Real>(model: &DwafmModel<F>, data: &Dataset, split: Split, batch_size: usize) -> Result<MetricsReport> {
    evaluate(model, data, &data.indices(split), batch_size)
}

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, masked_mae_loss};
use crate::config::RunConfig;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::DwafmModel;
use crate::numerics::rng::{stream_rng, Stream};
use crate::numerics::{clip_grad_norm, Adam, ParamStore, Real, Tape};

pub const LAST_DIR: &str = "last";
pub const BEST_DIR: &str = "best";
pub const EPOCH_LOG: &str = "epochs.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub eval_batch_size: usize,
    pub seed: u64,
}

impl From<&RunConfig> for TrainOptions {
    fn from(c: &RunConfig) -> Self {
        TrainOptions {
            lr: c.train.lr,
            batch_size: c.train.batch_size,
            epochs: c.train.epochs,
            clip_norm: c.train.clip_norm,
            eval_batch_size: c.train.eval_batch_size,
            seed: c.seed,
        }
    }
}

/// One row of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub val_mape: f64,
    pub seconds: f64,
}

impl EpochRecord {
    /// Everything except wall-clock time.
    pub fn same_numbers(&self, other: &EpochRecord) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.val_mae.to_bits() == other.val_mae.to_bits()
            && self.val_rmse.to_bits() == other.val_rmse.to_bits()
            && self.val_mape.to_bits() == other.val_mape.to_bits()
    }
}

pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in log {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display()))))
        .collect()
}

/// Mini-batch Adam on the masked MAE, keeping the parameters with the best
/// validation MAE seen so far.
#[derive(Clone, Debug)]
pub struct Trainer<F> {
    pub model: DwafmModel<F>,
    pub opts: TrainOptions,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_mae: Option<f64>,
    best: Option<ParamStore<F>>,
    pub log: Vec<EpochRecord>,
    /// Batches whose gradient norm exceeded `clip_norm`.
    pub clipped_batches: usize,
}

impl<F: Real> Trainer<F> {
    pub fn new(model: DwafmModel<F>, opts: TrainOptions) -> Self {
        Trainer {
            model,
            opts,
            epoch: 0,
            best_val_mae: None,
            best: None,
            log: Vec::new(),
            clipped_batches: 0,
        }
    }

    fn param_norms(&self) -> String {
        self.model
            .store
            .iter()
            .map(|p| format!("{}={:.4e}", p.name, p.value.norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// One pass over the shuffled training windows, then validation.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochRecord> {
        let start = Instant::now();
        let e = self.epoch;
        let mut order = data.indices(Split::Train);
        order.shuffle(&mut stream_rng(self.opts.seed, Stream::Shuffle, e as u64));
        let adam = Adam::new(self.opts.lr);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (j, chunk) in order.chunks(self.opts.batch_size).enumerate() {
            let batch = data.batch::<F>(chunk);
            let rng = stream_rng(self.opts.seed, Stream::Dropout, ((e as u64) << 24) | j as u64);
            let mut tape = Tape::training(rng);
            let f = self.model.forward(&mut tape, &batch)?;
            let loss = masked_mae_loss(&mut tape, f.pred, &batch.y)?;
            let value = tape.value(loss).data()[0].f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: e + 1,
                    batch: j,
                    norms: self.param_norms(),
                });
            }
            let grads = tape.backward(loss)?;
            tape.accumulate_param_grads(&grads, &mut self.model.store);
            if self.opts.clip_norm > 0.0
                && clip_grad_norm(&mut self.model.store, self.opts.clip_norm) > self.opts.clip_norm
            {
                self.clipped_batches += 1;
            }
            adam.step(&mut self.model.store);
            loss_sum += value;
            batches += 1;
        }
        let val = evaluate(&self.model, data, &data.indices(Split::Val), self.opts.eval_batch_size)?;
        if self.best_val_mae.is_none_or(|b| val.mae < b) {
            self.best_val_mae = Some(val.mae);
            self.best = Some(self.model.store.clone());
        }
        self.epoch += 1;
        let rec = EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_mae: val.mae,
            val_rmse: val.rmse,
            val_mape: val.mape_pct,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Trains until `opts.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn train(
        &mut self,
        data: &Dataset,
        mut on_epoch: impl FnMut(&Self, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.opts.epochs {
            let rec = self.run_epoch(data)?;
            on_epoch(self, &rec)?;
        }
        Ok(())
    }

    /// The model with the best validation parameters (current ones if no
    /// epoch has run).
    pub fn best_model(&self) -> DwafmModel<F> {
        let mut m = self.model.clone();
        if let Some(best) = &self.best {
            m.store = best.clone();
        }
        m
    }

    /// Writes `last/`, `best/` and the epoch log under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let seed = self.opts.seed;
        self.model.save_checkpoint(&dir.join(LAST_DIR), seed, self.epoch, self.best_val_mae)?;
        self.best_model().save_checkpoint(&dir.join(BEST_DIR), seed, self.epoch, self.best_val_mae)?;
        write_epoch_log(&dir.join(EPOCH_LOG), &self.log)
    }

    /// Restores a trainer written by [`Trainer::save`].
    pub fn resume(dir: &Path, opts: TrainOptions) -> Result<Self> {
        let (model, manifest) = DwafmModel::<F>::load_checkpoint(&dir.join(LAST_DIR))?;
        if manifest.seed != opts.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with seed {}, run uses {}",
                manifest.seed, opts.seed
            )));
        }
        let best = if manifest.best_val_mae.is_some() {
            Some(DwafmModel::<F>::load_checkpoint(&dir.join(BEST_DIR))?.0.store)
        } else {
            None
        };
        let log = read_epoch_log(&dir.join(EPOCH_LOG))?;
        if log.len() != manifest.epoch {
            return Err(Error::Checkpoint(format!(
                "epoch log has {} rows but checkpoint is at epoch {}",
                log.len(),
                manifest.epoch
            )));
        }
        Ok(Trainer {
            model,
            opts,
            epoch: manifest.epoch,
            best_val_mae: manifest.best_val_mae,
            best,
            log,
            clipped_batches: 0,
        })
    }
}

//! End-to-end runs shared by the command line and the acceptance tests.

use serde::Serialize;

use crate::config::{Precision, RunConfig, Variant};
use crate::data::{load_dataset_dir, Dataset, Split};
use crate::error::Result;
use crate::model::DwafmModel;
use crate::numerics::Real;
use crate::training::{evaluate_split, EpochRecord, MetricsReport, TrainOptions, Trainer};

/// Loads the dataset named by `cfg` (directory or synthetic generator).
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (series, graph) = match cfg.data_dir() {
        Some(dir) => load_dataset_dir(&dir)?,
        None => cfg.synthetic.generate()?,
    };
    Dataset::new(&series, graph, cfg.model.t_in, cfg.model.t_out, cfg.data.split)
}

/// Builds a freshly initialized model for `cfg` and `data`.
pub fn build_model<F: Real>(cfg: &RunConfig, data: &Dataset) -> Result<DwafmModel<F>> {
    let mc = cfg.model_config(data.n_nodes(), data.steps_per_day());
    DwafmModel::new(mc, &data.graph, data.stats(), cfg.seed)
}

/// Summary of one training run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub variant: Variant,
    pub seed: u64,
    pub params: usize,
    pub epochs: usize,
    pub best_val_mae: f64,
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub mean_epoch_seconds: f64,
    pub clipped_batches: usize,
}

impl RunReport {
    pub fn from_trainer<F: Real>(trainer: &Trainer<F>, data: &Dataset, eval_batch: usize) -> Result<Self> {
        let best = trainer.best_model();
        let val = evaluate_split(&best, data, Split::Val, eval_batch)?;
        let mut test = evaluate_split(&best, data, Split::Test, eval_batch)?;
        let secs: f64 = trainer.log.iter().map(|r| r.seconds).sum();
        let mean_epoch_seconds = secs / trainer.log.len().max(1) as f64;
        test.wall_seconds_per_epoch = Some(mean_epoch_seconds);
        Ok(RunReport {
            variant: best.variant(),
            seed: trainer.opts.seed,
            params: best.num_params(),
            epochs: trainer.epoch,
            best_val_mae: trainer.best_val_mae.unwrap_or(val.mae),
            val,
            test,
            mean_epoch_seconds,
            clipped_batches: trainer.clipped_batches,
        })
    }
}

/// Trains a fresh model in the configured precision and reports on the
/// validation and test splits with the best-validation parameters.
pub fn train_and_report(
    cfg: &RunConfig,
    data: &Dataset,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunReport> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, data, on_epoch),
        Precision::F64 => train_typed::<f64>(cfg, data, on_epoch),
    }
}

fn train_typed<F: Real>(
    cfg: &RunConfig,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunReport> {
    let model = build_model::<F>(cfg, data)?;
    let mut trainer = Trainer::new(model, TrainOptions::from(cfg));
    trainer.train(data, |_, rec| {
        on_epoch(rec);
        Ok(())
    })?;
    RunReport::from_trainer(&trainer, data, cfg.train.eval_batch_size)
}

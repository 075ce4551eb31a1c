use serde::Serialize;

use crate::config::{ModelConfig, RunConfig, Variant};
use crate::data::synthetic::SyntheticSpec;
use crate::data::{Batch, Dataset};
use crate::error::Result;
use crate::model::DwafmModel;
use crate::numerics::gradcheck::relative_error;
use crate::numerics::{Tape, Tensor, Var};

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Smooth scalar objective: half the mean squared error of the forecast,
/// measured in standard deviations.
fn objective(model: &DwafmModel<f64>, tape: &mut Tape<f64>, batch: &Batch<f64>) -> Result<Var> {
    let f = model.forward(tape, batch)?;
    let y = tape.constant(batch.y.clone());
    let d = tape.sub(f.pred, y)?;
    let d = tape.scale(d, 1.0 / model.stats.std);
    let sq = tape.square(d);
    let m = tape.mean(sq);
    Ok(tape.scale(m, 0.5))
}

/// Compares every parameter's backpropagated gradient against central
/// differences. `corrupt` perturbs one analytic entry by 1% so the check can
/// be shown to fail.
pub fn gradcheck_model(model: &mut DwafmModel<f64>, batch: &Batch<f64>, h: f64, corrupt: bool) -> Result<GradcheckReport> {
    let mut tape = Tape::eval();
    let loss = objective(model, &mut tape, batch)?;
    let grads = tape.backward(loss)?;
    model.store.zero_grad();
    tape.accumulate_param_grads(&grads, &mut model.store);
    let analytic: Vec<Tensor<f64>> = model.store.iter().map(|p| p.grad.clone()).collect();
    model.store.zero_grad();

    let eval = |m: &DwafmModel<f64>| -> Result<f64> {
        let mut tape = Tape::eval();
        let l = objective(m, &mut tape, batch)?;
        Ok(tape.value(l).data()[0])
    };

    let mut checks = Vec::new();
    let ids: Vec<_> = model.store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let numel = model.store.get(id).numel();
        let mut worst = ParamCheck {
            name: model.store.get(id).name.clone(),
            numel,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..numel {
            let orig = model.store.get(id).value.data()[j];
            model.store.get_mut(id).value.data_mut()[j] = orig + h;
            let plus = eval(model)?;
            model.store.get_mut(id).value.data_mut()[j] = orig - h;
            let minus = eval(model)?;
            model.store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let mut a = analytic[k].data()[j];
            if corrupt && k == 0 && j == 0 {
                a *= 1.01;
            }
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || j == 0 {
                worst = ParamCheck {
                    max_rel_error: err,
                    worst_index: j,
                    analytic: a,
                    numeric,
                    ..worst
                };
            }
        }
        checks.push(worst);
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        variant: model.variant(),
        params: checks,
        max_rel_error,
        passed: max_rel_error <= GRADCHECK_TOLERANCE,
    })
}

/// The toy problem: 4 nodes on a ring, `T = 4`, `T_f = 2`, `d_f = 3`, one
/// layer, hourly sampling (24 time-of-day slots), two windows per batch.
pub fn toy_problem(variant: Variant, seed: u64) -> Result<(DwafmModel<f64>, Batch<f64>)> {
    let spec = SyntheticSpec {
        n_nodes: 4,
        len: 64,
        sample_rate_minutes: 60,
        fast_period: 4,
        seed,
        ..SyntheticSpec::default()
    };
    let (series, graph) = spec.generate()?;
    let data = Dataset::new(&series, graph, 4, 2, [6, 2, 2])?;
    let mut run = RunConfig::default();
    run.model.t_in = 4;
    run.model.t_out = 2;
    run.model.d_f = 3;
    run.model.layers = 1;
    run.model.variant = variant;
    let cfg: ModelConfig = run.model_config(data.n_nodes(), data.steps_per_day());
    let model = DwafmModel::new(cfg, &data.graph, data.stats(), seed)?;
    let batch = data.batch(&[3, 17]);
    Ok((model, batch))
}

/// Runs [`gradcheck_model`] on the toy problem for `variant`.
pub fn gradcheck(variant: Variant, seed: u64) -> Result<GradcheckReport> {
    let (mut model, batch) = toy_problem(variant, seed)?;
    gradcheck_model(&mut model, &batch, GRADCHECK_STEP, false)
}

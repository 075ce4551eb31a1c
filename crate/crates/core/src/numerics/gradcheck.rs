//! Central finite-difference gradient checks.

use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};

/// Relative error with an absolute floor so that near-zero gradients are
/// judged on absolute difference.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst mismatch found for one input tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct InputCheck {
    pub input: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares the tape's gradient of `f` against central differences with
/// step `h` for every entry of every input.
pub fn check_inputs<G>(inputs: &[Tensor<f64>], h: f64, f: G) -> Result<Vec<InputCheck>>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::eval();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::eval();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, &v) in vars.iter().enumerate() {
        let analytic = grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[idx].shape()));
        let mut worst = InputCheck {
            input: idx,
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for j in 0..inputs[idx].numel() {
            let orig = work[idx].data()[j];
            work[idx].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[idx].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[idx].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[j], numeric);
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst_index = j;
            }
        }
        report.push(worst);
    }
    Ok(report)
}

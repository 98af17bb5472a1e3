//! Central finite-difference gradient checking at 64-bit precision.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error of one input's analytic gradient against the numeric one:
/// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`, or 0 when both
/// vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Evaluates the scalar function `f` on fresh tapes and compares the tape's
/// gradient with respect to each input against central differences.
///
/// Returns one relative error per input (see [`relative_error`]).
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        errors.push(relative_error(analytic[k].data(), &numeric));
    }
    Ok(errors)
}

//! Central finite-difference checks for tape-built scalar functions.
//!
//! The numeric side only ever evaluates the forward pass on fresh tapes, so it
//! stays independent of every backward rule it is used to verify. Functions
//! that draw randomness (dropout) must seed their generator inside `f` so that
//! every evaluation sees the same mask.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Mode, Tape, Var};

/// Default perturbation for central differences.
pub const FD_STEP: f64 = 1e-4;

/// Outcome of comparing analytic and numeric gradients for each input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Norm-wise relative error (see [`relative_error`]) per input, over the
    /// coordinates that were not skipped.
    pub rel_errors: Vec<f64>,
    /// Smallest distance of any ReLU input to its kink at the base point.
    pub relu_margin: Option<f64>,
    /// Coordinates left out because a ±step perturbation flipped some ReLU.
    pub skipped: usize,
    /// Coordinates compared.
    pub checked: usize,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    /// True when no ReLU input lies within `margin` of zero.
    pub fn clear_of_kinks(&self, margin: f64) -> bool {
        self.relu_margin.is_none_or(|m| m >= margin)
    }
}

/// Gradient norms below this are treated as this size when dividing, so
/// round-off in the central difference of an exactly-zero gradient (about
/// `1e-16 * |f| / FD_STEP`) does not read as a large relative error.
pub const NORM_FLOOR: f64 = 1e-6;

/// Norm-wise relative error `|a - n| / max(|a|, |n|, NORM_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(NORM_FLOOR)
}

fn run<F>(f: &F, inputs: &[Tensor], mode: Mode) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(mode);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape.value(out).item()?, tape.relu_pattern()))
}

/// Evaluates `f` (which must return a scalar) at `inputs` in eval mode.
pub fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(run(f, inputs, Mode::Eval)?.0)
}

/// Central-difference gradient of `f` with respect to every entry of
/// `inputs`, in eval mode.
pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(numeric_gradient_in(Mode::Eval, f, inputs, step)?.0)
}

/// Central differences in `mode`, plus a per-coordinate flag telling whether
/// either perturbation changed the sign pattern of some ReLU input.
pub fn numeric_gradient_in<F>(mode: Mode, f: &F, inputs: &[Tensor], step: f64) -> Result<(Vec<Tensor>, Vec<Vec<bool>>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, base_pattern) = run(f, inputs, mode)?;
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    let mut crossed = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        let mut flags = vec![false; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let base = inputs[i].data()[j];
            work[i].data_mut()[j] = base + step;
            let (plus, pp) = run(f, &work, mode)?;
            work[i].data_mut()[j] = base - step;
            let (minus, pm) = run(f, &work, mode)?;
            work[i].data_mut()[j] = base;
            g.data_mut()[j] = (plus - minus) / (2.0 * step);
            flags[j] = pp != base_pattern || pm != base_pattern;
        }
        grads.push(g);
        crossed.push(flags);
    }
    Ok((grads, crossed))
}

/// Compares the tape's backward pass against central differences in eval mode.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_gradients_in(Mode::Eval, f, inputs, step)
}

/// Compares the backward pass against central differences in `mode`.
/// Coordinates whose perturbation crosses a ReLU kink are skipped.
pub fn check_gradients_in<F>(mode: Mode, f: F, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(mode);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    tape.backward(out)?;
    let relu_margin = tape.min_relu_margin();
    let (numeric, crossed) = numeric_gradient_in(mode, &f, inputs, step)?;
    let (mut skipped, mut checked) = (0, 0);
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for ((&v, n), flags) in vars.iter().zip(&numeric).zip(&crossed) {
        let a = tape.grad(v).expect("leaf grad");
        let (mut av, mut nv) = (Vec::new(), Vec::new());
        for ((&x, &y), &skip) in a.data().iter().zip(n.data()).zip(flags) {
            if skip {
                skipped += 1;
            } else {
                av.push(x);
                nv.push(y);
                checked += 1;
            }
        }
        rel_errors.push(relative_error(&av, &nv));
    }
    Ok(GradCheck { rel_errors, relu_margin, skipped, checked })
}

//! Central finite-difference gradient checking.
//!
//! The checked function may return a tensor of any shape; it is reduced to a
//! scalar with fixed, non-uniform weights so every output element contributes
//! a distinct direction. The numeric side only ever runs forward passes.

use super::{EngineError, Tape, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Maximum accepted error, see [`relative_error`].
pub const TOLERANCE: f64 = 1e-6;

/// `|a - n| / max(1, |a|, |n|)`: relative for gradients of magnitude above
/// one, absolute below.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_error: f64,
    /// (input index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

fn output_weight(i: usize) -> f64 {
    0.5 + (i as f64 * 0.7311 + 0.3).sin()
}

fn weighted_loss<F>(tape: &mut Tape, vars: &[Var], f: &F) -> Result<Var, EngineError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, EngineError>,
{
    let out = f(tape, vars)?;
    let n = tape.value(out).len();
    let shape = tape.shape(out).to_vec();
    let w = Tensor::from_f64(shape, (0..n).map(output_weight).collect())?;
    let w = tape.constant(&w)?;
    let prod = tape.mul(out, w)?;
    tape.sum_all(prod)
}

fn loss_value<F>(inputs: &[Tensor], f: &F) -> Result<f64, EngineError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, EngineError>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.constant(t))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = weighted_loss(&mut tape, &vars, f)?;
    Ok(tape.value(loss)[0])
}

/// Compares backward-pass gradients of `f` with respect to every element of
/// every `inputs` tensor against central differences.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<GradReport, EngineError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, EngineError>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.param(t))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = weighted_loss(&mut tape, &vars, &f)?;
    tape.backward(loss)?;

    let mut report = GradReport {
        max_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (j, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[j].len()]);
        for (k, &exact) in analytic.iter().enumerate() {
            let orig = inputs[j].as_f64()?[k];
            work[j].as_f64_mut()?[k] = orig + STEP;
            let plus = loss_value(&work, &f)?;
            work[j].as_f64_mut()?[k] = orig - STEP;
            let minus = loss_value(&work, &f)?;
            work[j].as_f64_mut()?[k] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(exact, numeric);
            report.checked += 1;
            if err > report.max_error || report.worst.is_none() {
                report.max_error = report.max_error.max(err);
                report.worst = Some((j, k));
            }
        }
    }
    Ok(report)
}

//! Central finite-difference checks for tape gradients.
//!
//! Only forward evaluations are used on the numeric side, so the checks are
//! independent of every backward rule.

use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// `|analytic − numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(input or parameter index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, input: usize, elem: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = err.max(self.max_relative_error);
            self.worst = Some((input, elem));
        }
    }
}

fn scalar_of(tape: &Tape, var: Var) -> Result<f64> {
    let v = tape.value(var);
    if !v.is_scalar() {
        return Err(Error::contract("gradient check needs a scalar function"));
    }
    Ok(v.item())
}

/// Checks `f(inputs)` gradients with respect to every input entry.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for e in 0..inputs[i].numel() {
            let orig = inputs[i].data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            report.record(i, e, analytic.data()[e], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Per-parameter check of a scalar built from the parameters of `store`.
///
/// `f` must be deterministic (re-seed any RNG inside it). Frozen parameters
/// are skipped. Returns `(name, report)` for every trainable parameter.
pub fn check_param_gradients<F>(store: &mut ParamStore, f: F, step: f64) -> Result<Vec<(String, GradCheckReport)>>
where
    F: Fn(&ParamStore, &mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(store, &mut tape, &bound)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;

    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable()).map(|(id, _)| id).collect();
    let mut reports = Vec::new();
    for id in ids {
        let analytic = grads
            .get(bound[id])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        let mut report = GradCheckReport::default();
        for e in 0..analytic.numel() {
            let orig = store.value(id).data()[e];
            let mut eval_at = |x: f64| -> Result<f64> {
                store.value_mut(id).data_mut()[e] = x;
                let mut tape = Tape::new();
                let bound = store.bind(&mut tape);
                let out = f(store, &mut tape, &bound)?;
                scalar_of(&tape, out)
            };
            let plus = eval_at(orig + step)?;
            let minus = eval_at(orig - step)?;
            store.value_mut(id).data_mut()[e] = orig;
            report.record(id.index(), e, analytic.data()[e], (plus - minus) / (2.0 * step));
        }
        reports.push((store.get(id).name().to_string(), report));
    }
    Ok(reports)
}

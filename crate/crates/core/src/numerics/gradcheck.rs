use alloc::string::String;
use alloc::vec::Vec;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares tape gradients with central differences.
///
/// `f` records a scalar on the supplied tape from the given parameters. It
/// is called once for the analytic gradient and twice per coordinate for
/// the numeric one, so it must be deterministic. Returns the maximum over
/// all coordinates of `|analytic − numeric| / max(1, |analytic|, |numeric|)`;
/// an empty store yields 0.
pub fn finite_diff_check<F>(mut f: F, params: &mut ParamStore, h: f64) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let out = f(params, &mut tape)?;
    let base = tape.value(out).get(0, 0);
    if !base.is_finite() {
        return Err(Error::NonFinite(String::from("objective at base point")));
    }
    tape.backward(out, params)?;

    let names: Vec<String> = params.names().map(String::from).collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let analytic = params.grad(name)?.clone();
        for idx in 0..analytic.len() {
            let orig = params.value(name)?.as_slice()[idx];
            let plus = eval_at(&mut f, params, name, idx, orig + h)?;
            let minus = eval_at(&mut f, params, name, idx, orig - h)?;
            params.get_mut(name)?.value.as_mut_slice()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.as_slice()[idx];
            let denom = 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn eval_at<F>(f: &mut F, params: &mut ParamStore, name: &str, idx: usize, x: f64) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    params.get_mut(name)?.value.as_mut_slice()[idx] = x;
    let mut tape = Tape::new();
    let out = f(params, &mut tape)?;
    let v = tape.value(out).get(0, 0);
    if !v.is_finite() {
        return Err(Error::NonFinite(alloc::format!("objective at {name}[{idx}]")));
    }
    Ok(v)
}

use alloc::collections::BTreeMap;
use alloc::string::String;

use libm::{cos, sqrt};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore};

/// AdamW moment accumulators, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: BTreeMap<String, Matrix>,
    pub v: BTreeMap<String, Matrix>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(name, p)| (String::from(name), Matrix::zeros(p.value.rows(), p.value.cols())))
                .collect()
        };
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One AdamW update from the gradients held in `params`. Weight decay is
/// applied to the parameter directly and only to parameters flagged for it.
pub fn adamw_step(params: &mut ParamStore, state: &mut OptimizerState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    for (name, p) in params.iter() {
        if let Some(bad) = p.grad.as_slice().iter().find(|g| !g.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("gradient of `{name}` is {bad}")));
        }
        let m = state.m.get(name).ok_or_else(|| Error::UnknownParam(name.into()))?;
        if m.shape() != p.value.shape() {
            return Err(Error::Shape {
                op: "adamw_step",
                left: m.shape(),
                right: p.value.shape(),
            });
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (name, p) in params.iter_mut() {
        let m = state.m.get_mut(name).expect("checked above");
        let v = state.v.get_mut(name).expect("checked above");
        let wd = if p.decay { cfg.weight_decay } else { 0.0 };
        let grad = p.grad.as_slice();
        let theta = p.value.as_mut_slice();
        let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
        for k in 0..theta.len() {
            let g = grad[k];
            ms[k] = b1 * ms[k] + (1.0 - b1) * g;
            vs[k] = b2 * vs[k] + (1.0 - b2) * g * g;
            let m_hat = ms[k] / c1;
            let v_hat = vs[k] / c2;
            theta[k] -= lr * (m_hat / (sqrt(v_hat) + cfg.eps_opt) + wd * theta[k]);
        }
    }
    Ok(())
}

/// Cosine one-cycle rate: rises from `peak / div_factor` to `peak` over the
/// first `pct_start` of the steps, then falls to `peak / final_div_factor`.
pub fn onecycle_lr(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::invalid(alloc::format!(
            "schedule step {step} out of range for {total_steps} steps"
        )));
    }
    let peak = cfg.learning_rate;
    let initial = peak / cfg.div_factor;
    let last = peak / cfg.final_div_factor;
    let up = (libm::round(cfg.pct_start * total_steps as f64) as usize).min(total_steps - 1);
    let cosine = |from: f64, to: f64, frac: f64| to + (from - to) * (1.0 + cos(core::f64::consts::PI * frac)) / 2.0;
    if step < up {
        Ok(cosine(initial, peak, step as f64 / up as f64))
    } else if step == up {
        Ok(peak)
    } else {
        let span = (total_steps - 1 - up) as f64;
        Ok(cosine(peak, last, (step - up) as f64 / span))
    }
}

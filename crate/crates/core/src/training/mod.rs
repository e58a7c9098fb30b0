//! Loss, AdamW, one-cycle schedule and the training loop.

mod optim;

pub use optim::{adamw_step, onecycle_lr, OptimizerState};

use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

use crate::data::{DateRange, FeaturePanel, WindowBatch};
use crate::error::{Error, Result};
use crate::evaluation::{ic, predict_windows};
use crate::model::{forward_on_tape, Graphs, GriffinModel, ModelConfig};
use crate::numerics::{Matrix, Mode, ParamStore, Tape, Var};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Peak rate of the one-cycle schedule.
    pub learning_rate: f64,
    /// Decoupled AdamW decay.
    pub weight_decay: f64,
    /// Coefficient of the squared-L2 term in the loss.
    pub l2_lambda: f64,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_windows: usize,
    /// Window length in trading days.
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
    pub grad_clip_norm: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            l2_lambda: 1e-4,
            epochs: 10,
            batch_windows: 1,
            window: 8,
            stride: 1,
            seed: 0,
            grad_clip_norm: 5.0,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::invalid(msg));
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if !(self.l2_lambda >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("l2_lambda and weight_decay must be non-negative");
        }
        if self.epochs == 0 || self.batch_windows == 0 || self.window == 0 || self.stride == 0 {
            return fail("epochs, batch_windows, window and stride must be at least 1");
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail("grad_clip_norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.pct_start) || !(self.div_factor > 0.0) || !(self.final_div_factor > 0.0) {
            return fail("one-cycle settings out of range");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps_opt > 0.0) {
            return fail("AdamW betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Mean squared error plus `lambda` times the squared L2 norm of the
/// decayed parameters.
pub fn loss(y: &[f64], y_hat: &[f64], params: &ParamStore, lambda: f64) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape {
            op: "loss",
            left: (y.len(), 1),
            right: (y_hat.len(), 1),
        });
    }
    if y.is_empty() {
        return Err(Error::invalid("loss over zero stocks"));
    }
    let mse = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse + lambda * params.l2_penalty())
}

/// Tape version of [`loss`] for a single window.
pub fn loss_on_tape(
    tape: &mut Tape,
    predictions: Var,
    target: &Matrix,
    params: &ParamStore,
    lambda: f64,
) -> Result<Var> {
    let mse = tape.mse(predictions, target)?;
    add_l2(tape, mse, params, lambda)
}

fn add_l2(tape: &mut Tape, data_loss: Var, params: &ParamStore, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(data_loss);
    }
    let mut total: Option<Var> = None;
    for (name, p) in params.iter() {
        if !p.decay {
            continue;
        }
        let v = tape.param(params, name)?;
        let sq = tape.sum_squares(v)?;
        total = Some(match total {
            Some(t) => tape.add(t, sq)?,
            None => sq,
        });
    }
    match total {
        Some(t) => {
            let pen = tape.scale(t, lambda)?;
            tape.add(data_loss, pen)
        }
        None => Ok(data_loss),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean daily IC on the validation range; NaN when undefined.
    pub val_ic: f64,
    /// Rate used at the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation IC (the final
    /// epoch when no validation IC is ever defined).
    pub model: GriffinModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Window end indices whose target date lies in `range`.
pub fn window_ends(panel: &FeaturePanel, range: &DateRange, steps: usize) -> Vec<usize> {
    (0..panel.n_dates())
        .filter(|&d| d + 1 >= steps && range.contains(&panel.dates()[d]))
        .collect()
}

/// Trains a fresh model on windows ending in `train_range`, keeping the
/// checkpoint with the best mean daily IC on `valid_range`.
pub fn train(
    panel: &FeaturePanel,
    graphs: Graphs<'_>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_range: &DateRange,
    valid_range: Option<&DateRange>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = GriffinModel::new(model_cfg.clone(), cfg.seed)?;
    train_model(panel, graphs, model, cfg, train_range, valid_range)
}

/// As [`train`], starting from the supplied parameters.
pub fn train_model(
    panel: &FeaturePanel,
    graphs: Graphs<'_>,
    mut model: GriffinModel,
    cfg: &TrainConfig,
    train_range: &DateRange,
    valid_range: Option<&DateRange>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ends: Vec<usize> = window_ends(panel, train_range, cfg.window)
        .into_iter()
        .step_by(cfg.stride)
        .collect();
    if ends.is_empty() {
        return Err(Error::invalid(alloc::format!(
            "no training windows of length {} end in {}..={}",
            cfg.window,
            train_range.start,
            train_range.end
        )));
    }
    let windows: Vec<WindowBatch> = ends
        .iter()
        .map(|&e| panel.window(e, cfg.window))
        .collect::<Result<_>>()?;
    let valid_ends = valid_range
        .map(|r| window_ends(panel, r, cfg.window))
        .unwrap_or_default();

    let steps_per_epoch = windows.len().div_ceil(cfg.batch_windows);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut state = OptimizerState::new(&model.params);
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream(cfg.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut tape = Tape::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_windows) {
            tape.clear();
            let mut data_loss: Option<Var> = None;
            for &w in chunk {
                let batch = &windows[w];
                let out = forward_on_tape(&mut tape, batch, graphs, &model, Mode::Train, &mut dropout_rng)?;
                let target = Matrix::column_vector(&batch.targets)?;
                let mse = tape.mse(out.predictions, &target)?;
                data_loss = Some(match data_loss {
                    Some(t) => tape.add(t, mse)?,
                    None => mse,
                });
            }
            let data_loss = data_loss.expect("chunks are non-empty");
            let data_loss = tape.scale(data_loss, 1.0 / chunk.len() as f64)?;
            let total = add_l2(&mut tape, data_loss, &model.params, cfg.l2_lambda)?;
            let value = tape.value(total).get(0, 0);
            if !value.is_finite() {
                return Err(Error::NonFinite(alloc::format!(
                    "training loss at step {step} (epoch {epoch})"
                )));
            }
            tape.backward(total, &mut model.params)?;
            model.params.clip_grad_norm(cfg.grad_clip_norm);
            lr = onecycle_lr(step, total_steps, cfg)?;
            adamw_step(&mut model.params, &mut state, lr, cfg)?;
            loss_sum += value;
            step += 1;
        }
        let val_ic = validation_ic(panel, graphs, &model, &valid_ends, cfg.window)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / steps_per_epoch as f64,
            val_ic,
            lr,
        });
        let better = match &best {
            None => true,
            Some((b, _, _)) => val_ic > *b || (b.is_nan() && !val_ic.is_nan()),
        };
        if better && (!val_ic.is_nan() || best.is_none()) {
            best = Some((val_ic, epoch, model.params.clone()));
        }
    }
    let (best_ic, best_epoch, params) = best.expect("at least one epoch");
    if best_ic.is_nan() {
        // No epoch had a defined validation IC: keep the final parameters.
        return Ok(TrainOutcome {
            best_epoch: cfg.epochs,
            model,
            log,
        });
    }
    model.params = params;
    Ok(TrainOutcome { model, log, best_epoch })
}

/// Mean daily IC over the given window ends; NaN when no day is defined.
fn validation_ic(
    panel: &FeaturePanel,
    graphs: Graphs<'_>,
    model: &GriffinModel,
    ends: &[usize],
    steps: usize,
) -> Result<f64> {
    if ends.is_empty() {
        return Ok(f64::NAN);
    }
    let days = predict_windows(panel, graphs, model, ends, steps)?;
    let ics: Vec<f64> = days.iter().filter_map(|d| ic(&d.prediction).ok()).collect();
    if ics.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(ics.iter().sum::<f64>() / ics.len() as f64)
}

/// Label of a training run, for logs.
pub fn describe(cfg: &TrainConfig) -> String {
    alloc::format!(
        "lr={} wd={} l2={} epochs={} window={} seed={}",
        cfg.learning_rate,
        cfg.weight_decay,
        cfg.l2_lambda,
        cfg.epochs,
        cfg.window,
        cfg.seed
    )
}

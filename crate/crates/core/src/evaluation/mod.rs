//! Ranking metrics, top-k backtest, portfolio statistics and gate analysis.

mod backtest;
mod gates;
mod metrics;

pub use backtest::{backtest_topk, portfolio_stats, BacktestResult, PortfolioStats, DEFAULT_TOP_K, PERIODS_PER_YEAR};
pub use gates::{gate_analysis, DayGroup, GateReport, GateTrace, GroupMeans, EXTREME_SHARE};
pub use metrics::{average_ranks, ic, icir, icir_rolling, pearson, rank_ic, DailyPrediction};

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::{DateRange, FeaturePanel};
use crate::error::{Error, Result};
use crate::model::{forward, Graphs, GriffinModel};
use crate::numerics::{order_invariant_sum, Matrix, Mode};
use crate::rng::{stream, Stream};
use crate::training::window_ends;

/// Eval-mode output for one target date.
#[derive(Debug, Clone, PartialEq)]
pub struct DayOutput {
    pub prediction: DailyPrediction,
    /// Mean gate over stocks at the window's last step, per relation.
    pub gates: Option<(f64, f64)>,
}

fn last_step_mean(g: &Matrix) -> f64 {
    let t = g.cols() - 1;
    let mut col: Vec<f64> = (0..g.rows()).map(|i| g.get(i, t)).collect();
    order_invariant_sum(&mut col) / g.rows() as f64
}

/// Runs the model in eval mode on the windows ending at each index of `ends`.
pub fn predict_windows(
    panel: &FeaturePanel,
    graphs: Graphs<'_>,
    model: &GriffinModel,
    ends: &[usize],
    steps: usize,
) -> Result<Vec<DayOutput>> {
    let mut rng = stream(0, Stream::Dropout);
    ends.iter()
        .map(|&end| {
            let batch = panel.window(end, steps)?;
            let out = forward(&batch, graphs, model, Mode::Eval, &mut rng)?;
            let gates = match (&out.gate_ind, &out.gate_inst) {
                (Some(a), Some(b)) => Some((last_step_mean(a), last_step_mean(b))),
                _ => None,
            };
            let date = batch.target_date().to_string();
            let prediction = DailyPrediction::new(&date, batch.tickers, out.predictions, batch.returns)?;
            Ok(DayOutput { prediction, gates })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Window length in trading days.
    pub steps: usize,
    pub top_k: usize,
    pub risk_free_daily: f64,
    pub periods_per_year: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            steps: 8,
            top_k: DEFAULT_TOP_K,
            risk_free_daily: 0.0,
            periods_per_year: PERIODS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyMetrics {
    pub date: String,
    /// `None` on days where the correlation is undefined.
    pub ic: Option<f64>,
    pub rank_ic: Option<f64>,
    pub portfolio_return: f64,
    pub benchmark_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ic: Result<f64>,
    pub icir: Result<f64>,
    pub rank_ic: Result<f64>,
    pub rank_icir: Result<f64>,
    pub stats: Result<PortfolioStats>,
    /// Days whose IC (or RankIC) was undefined and left out of the means.
    pub skipped_ic: usize,
    pub skipped_rank_ic: usize,
    pub daily: Vec<DailyMetrics>,
    pub backtest: BacktestResult,
    pub gates: Option<GateTrace>,
}

impl MetricsReport {
    pub fn ar(&self) -> Result<f64> {
        self.stats.as_ref().map(|s| s.ar).map_err(Clone::clone)
    }

    pub fn ir(&self) -> Result<f64> {
        match &self.stats {
            Ok(s) => s.ir.clone(),
            Err(e) => Err(e.clone()),
        }
    }

    pub fn ic_series(&self) -> Vec<f64> {
        self.daily.iter().filter_map(|d| d.ic).collect()
    }

    pub fn rank_ic_series(&self) -> Vec<f64> {
        self.daily.iter().filter_map(|d| d.rank_ic).collect()
    }
}

fn series_mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::undefined("no day with a defined correlation"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Metrics over precomputed daily predictions.
pub fn evaluate_days(days: &[DayOutput], opts: &EvalOptions) -> Result<MetricsReport> {
    if days.is_empty() {
        return Err(Error::invalid("evaluation over zero days"));
    }
    let preds: Vec<DailyPrediction> = days.iter().map(|d| d.prediction.clone()).collect();
    let backtest = backtest_topk(&preds, opts.top_k)?;
    let daily: Vec<DailyMetrics> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| DailyMetrics {
            date: p.date.clone(),
            ic: ic(p).ok(),
            rank_ic: rank_ic(p).ok(),
            portfolio_return: backtest.portfolio[i],
            benchmark_return: backtest.benchmark[i],
        })
        .collect();
    let ics: Vec<f64> = daily.iter().filter_map(|d| d.ic).collect();
    let rics: Vec<f64> = daily.iter().filter_map(|d| d.rank_ic).collect();
    let gates = if days.iter().all(|d| d.gates.is_some()) {
        let mut trace = GateTrace::default();
        for d in days {
            let (a, b) = d.gates.expect("checked");
            trace.dates.push(d.prediction.date.clone());
            trace.industry.push(a);
            trace.institution.push(b);
        }
        Some(trace)
    } else {
        None
    };
    Ok(MetricsReport {
        ic: series_mean(&ics),
        icir: icir(&ics),
        rank_ic: series_mean(&rics),
        rank_icir: icir(&rics),
        stats: portfolio_stats(&backtest, opts.risk_free_daily, opts.periods_per_year),
        skipped_ic: days.len() - ics.len(),
        skipped_rank_ic: days.len() - rics.len(),
        daily,
        backtest,
        gates,
    })
}

/// Eval-mode forward over every date of `range` with a full window behind it.
pub fn evaluate(
    panel: &FeaturePanel,
    graphs: Graphs<'_>,
    model: &GriffinModel,
    range: &DateRange,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let ends = window_ends(panel, range, opts.steps);
    if ends.is_empty() {
        return Err(Error::invalid(alloc::format!(
            "no evaluation windows of length {} end in {}..={}",
            opts.steps,
            range.start,
            range.end
        )));
    }
    let days = predict_windows(panel, graphs, model, &ends, opts.steps)?;
    evaluate_days(&days, opts)
}

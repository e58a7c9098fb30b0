use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;

use super::metrics::{mean, sample_std, DailyPrediction};
use crate::error::{Error, Result};
use crate::numerics::order_invariant_sum;

pub const DEFAULT_TOP_K: usize = 30;
pub const PERIODS_PER_YEAR: usize = 252;

/// Daily returns of the top-k portfolio and the equal-weighted universe.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub dates: Vec<String>,
    pub portfolio: Vec<f64>,
    pub benchmark: Vec<f64>,
}

impl BacktestResult {
    pub fn excess(&self) -> Vec<f64> {
        self.portfolio.iter().zip(&self.benchmark).map(|(p, b)| p - b).collect()
    }
}

fn equal_weight(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    order_invariant_sum(&mut v) / n
}

/// Each day, holds the `k` highest-scored stocks in equal weight (ties go
/// to the lexicographically smaller ticker).
pub fn backtest_topk(days: &[DailyPrediction], k: usize) -> Result<BacktestResult> {
    if k == 0 {
        return Err(Error::invalid("portfolio size must be at least 1"));
    }
    let mut out = BacktestResult {
        dates: Vec::with_capacity(days.len()),
        portfolio: Vec::with_capacity(days.len()),
        benchmark: Vec::with_capacity(days.len()),
    };
    for day in days {
        if k > day.len() {
            return Err(Error::invalid(alloc::format!(
                "{}: top-{k} portfolio from {} stocks",
                day.date,
                day.len()
            )));
        }
        let mut order: Vec<usize> = (0..day.len()).collect();
        order.sort_by(|&a, &b| {
            day.scores[b]
                .total_cmp(&day.scores[a])
                .then_with(|| day.tickers[a].cmp(&day.tickers[b]))
        });
        out.dates.push(day.date.clone());
        out.portfolio
            .push(equal_weight(order[..k].iter().map(|&i| day.returns[i])));
        out.benchmark.push(equal_weight(day.returns.iter().copied()));
    }
    Ok(out)
}

/// Annualized portfolio statistics. Each ratio is undefined when its
/// denominator has zero spread.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioStats {
    /// Arithmetic annualized mean excess return over the benchmark.
    pub ar: f64,
    pub ir: Result<f64>,
    pub sharpe: Result<f64>,
    pub cumulative: f64,
    pub volatility: f64,
}

pub fn portfolio_stats(
    result: &BacktestResult,
    risk_free_daily: f64,
    periods_per_year: usize,
) -> Result<PortfolioStats> {
    let days = result.portfolio.len();
    if days < 2 || result.benchmark.len() != days {
        return Err(Error::undefined(alloc::format!(
            "portfolio statistics need at least two aligned days, got {days}"
        )));
    }
    let ppy = periods_per_year as f64;
    let excess = result.excess();
    let over_rf: Vec<f64> = result.portfolio.iter().map(|p| p - risk_free_daily).collect();
    let ratio = |xs: &[f64], what: &str| -> Result<f64> {
        let sd = sample_std(xs);
        if sd == 0.0 || xs.windows(2).all(|w| w[0] == w[1]) {
            return Err(Error::undefined(alloc::format!("{what}: zero standard deviation")));
        }
        Ok(mean(xs) / sd * sqrt(ppy))
    };
    Ok(PortfolioStats {
        ar: ppy * mean(&excess),
        ir: ratio(&excess, "IR"),
        sharpe: ratio(&over_rf, "Sharpe"),
        cumulative: result.portfolio.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0,
        volatility: sample_std(&result.portfolio) * sqrt(ppy),
    })
}

use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{Error, Result};

/// Scores and realized returns of one cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPrediction {
    pub date: String,
    pub tickers: Vec<String>,
    pub scores: Vec<f64>,
    pub returns: Vec<f64>,
}

impl DailyPrediction {
    pub fn new(date: &str, tickers: Vec<String>, scores: Vec<f64>, returns: Vec<f64>) -> Result<Self> {
        if tickers.len() != scores.len() || tickers.len() != returns.len() {
            return Err(Error::invalid(alloc::format!(
                "{date}: {} tickers, {} scores, {} returns",
                tickers.len(),
                scores.len(),
                returns.len()
            )));
        }
        let mut sorted: Vec<&String> = tickers.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(alloc::format!("{date}: duplicate ticker {}", w[0])));
        }
        if scores.iter().chain(&returns).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("{date}: scores or returns")));
        }
        Ok(DailyPrediction {
            date: date.into(),
            tickers,
            scores,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n − 1) standard deviation.
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

/// Pearson correlation, clamped to [-1, 1].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            op: "pearson",
            left: (x.len(), 1),
            right: (y.len(), 1),
        });
    }
    if x.len() < 2 {
        return Err(Error::undefined("correlation needs at least two points"));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::undefined("correlation of a constant vector"));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::undefined("correlation of a constant vector"));
    }
    Ok((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

pub fn ic(day: &DailyPrediction) -> Result<f64> {
    pearson(&day.scores, &day.returns).map_err(|e| on_date(e, &day.date))
}

pub fn rank_ic(day: &DailyPrediction) -> Result<f64> {
    if is_constant(&day.scores) || is_constant(&day.returns) {
        return Err(on_date(Error::undefined("correlation of a constant vector"), &day.date));
    }
    pearson(&average_ranks(&day.scores), &average_ranks(&day.returns)).map_err(|e| on_date(e, &day.date))
}

fn on_date(e: Error, date: &str) -> Error {
    match e {
        Error::Undefined(msg) => Error::Undefined(alloc::format!("{date}: {msg}")),
        other => other,
    }
}

/// Mean over sample standard deviation of a daily IC (or RankIC) series.
pub fn icir(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::undefined("ratio needs at least two values"));
    }
    let sd = sample_std(series);
    if sd == 0.0 || is_constant(series) {
        return Err(Error::undefined("zero standard deviation"));
    }
    Ok(mean(series) / sd)
}

/// [`icir`] over each trailing window of `window` values; `None` where the
/// ratio is undefined.
pub fn icir_rolling(series: &[f64], window: usize) -> Result<Vec<Option<f64>>> {
    if window < 2 {
        return Err(Error::invalid("rolling window must be at least 2"));
    }
    Ok(series.windows(window).map(|w| icir(w).ok()).collect())
}

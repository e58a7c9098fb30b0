//! Feature panels, label preprocessing, temporal windows, synthetic data.

mod panel;
mod synth;

pub use panel::{make_windows, FeaturePanel, WindowBatch, DEFAULT_D_COMPANY, DEFAULT_D_MARKET};
pub use synth::{synth_generate, SynthConfig, SynthData, SIGNAL_COLUMN};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Inclusive range of ISO dates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DateRange {
    pub start: String,
    pub end: String,
}

impl DateRange {
    pub fn new(start: &str, end: &str) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(alloc::format!("empty date range {start}..={end}")));
        }
        Ok(DateRange {
            start: start.into(),
            end: end.into(),
        })
    }

    pub fn contains(&self, date: &str) -> bool {
        self.start.as_str() <= date && date <= self.end.as_str()
    }
}

pub const DEFAULT_WINSOR_LO: f64 = 0.01;
pub const DEFAULT_WINSOR_HI: f64 = 0.99;

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty vector"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    Ok(quantile_sorted(&sorted, p))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = libm::ceil(h) as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Clips values to `[Q(p_lo), Q(p_hi)]`, preserving element order.
pub fn winsorize_cross_section(values: &[f64], p_lo: f64, p_hi: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("winsorize of an empty vector"));
    }
    if !(0.0 <= p_lo && p_lo < p_hi && p_hi <= 1.0) {
        return Err(Error::invalid(alloc::format!(
            "winsorization bounds need 0 <= p_lo < p_hi <= 1, got {p_lo}, {p_hi}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let lo = quantile_sorted(&sorted, p_lo);
    let hi = quantile_sorted(&sorted, p_hi);
    Ok(values.iter().map(|v| v.clamp(lo, hi)).collect())
}

/// Below this population std a cross-section is treated as constant.
pub const DEGENERATE_STD: f64 = 1e-12;

/// `(v − mean) / std` with population std; constant vectors map to zeros.
pub fn zscore_cross_section(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    if std < DEGENERATE_STD {
        return alloc::vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Replaces labels with per-date winsorized, z-scored raw returns.
pub fn preprocess_labels(panel: FeaturePanel, p_lo: f64, p_hi: f64) -> Result<FeaturePanel> {
    let n = panel.n_stocks();
    let mut labels = Vec::with_capacity(panel.n_dates() * n);
    for d in 0..panel.n_dates() {
        let clipped = winsorize_cross_section(panel.returns_on(d), p_lo, p_hi)?;
        labels.extend(zscore_cross_section(&clipped));
    }
    panel.with_labels(labels)
}

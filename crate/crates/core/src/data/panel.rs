use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::relations::check_permutation;

pub const DEFAULT_D_COMPANY: usize = 158;
pub const DEFAULT_D_MARKET: usize = 63;

/// Dense (date, stock) panel of company features, date-level market
/// features, raw next-period returns and (after preprocessing) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    dates: Vec<String>,
    tickers: Vec<String>,
    d_company: usize,
    d_market: usize,
    /// `[date][stock][d_company]`
    company: Vec<f64>,
    /// `[date][d_market]`
    market: Vec<f64>,
    /// `[date][stock]`
    raw_returns: Vec<f64>,
    labels: Option<Vec<f64>>,
}

impl FeaturePanel {
    pub fn new(
        dates: Vec<String>,
        tickers: Vec<String>,
        d_company: usize,
        d_market: usize,
        company: Vec<f64>,
        market: Vec<f64>,
        raw_returns: Vec<f64>,
    ) -> Result<Self> {
        let (nd, ns) = (dates.len(), tickers.len());
        if nd == 0 || ns == 0 {
            return Err(Error::invalid("panel needs at least one date and one ticker"));
        }
        let expect = |what: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                return Err(Error::invalid(alloc::format!(
                    "{what}: expected {want} values, got {got}"
                )));
            }
            Ok(())
        };
        expect("company features", company.len(), nd * ns * d_company)?;
        expect("market features", market.len(), nd * d_market)?;
        expect("returns", raw_returns.len(), nd * ns)?;
        for (what, xs) in [("company", &company), ("market", &market), ("returns", &raw_returns)] {
            if xs.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(alloc::format!("{what} values")));
            }
        }
        for w in dates.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(alloc::format!(
                    "dates must be strictly increasing: {} then {}",
                    w[0],
                    w[1]
                )));
            }
        }
        let mut sorted = tickers.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ns {
            return Err(Error::invalid("duplicate ticker in panel"));
        }
        Ok(FeaturePanel {
            dates,
            tickers,
            d_company,
            d_market,
            company,
            market,
            raw_returns,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.raw_returns.len() {
            return Err(Error::invalid("label count does not match the panel"));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Replaces raw returns and drops any labels.
    pub fn with_raw_returns(mut self, raw_returns: Vec<f64>) -> Result<Self> {
        if raw_returns.len() != self.raw_returns.len() {
            return Err(Error::invalid("return count does not match the panel"));
        }
        if raw_returns.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("returns values".into()));
        }
        self.raw_returns = raw_returns;
        self.labels = None;
        Ok(self)
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn d_company(&self) -> usize {
        self.d_company
    }

    pub fn d_market(&self) -> usize {
        self.d_market
    }

    pub fn date_index(&self, date: &str) -> Option<usize> {
        self.dates.binary_search_by(|d| d.as_str().cmp(date)).ok()
    }

    pub fn company_row(&self, date: usize, stock: usize) -> &[f64] {
        let off = (date * self.n_stocks() + stock) * self.d_company;
        &self.company[off..off + self.d_company]
    }

    pub fn market_row(&self, date: usize) -> &[f64] {
        &self.market[date * self.d_market..(date + 1) * self.d_market]
    }

    pub fn returns_on(&self, date: usize) -> &[f64] {
        let n = self.n_stocks();
        &self.raw_returns[date * n..(date + 1) * n]
    }

    pub fn labels_on(&self, date: usize) -> Option<&[f64]> {
        let n = self.n_stocks();
        self.labels.as_ref().map(|l| &l[date * n..(date + 1) * n])
    }

    pub fn has_labels(&self) -> bool {
        self.labels.is_some()
    }

    /// Window of `steps` dates ending at index `end`. Targets are the labels
    /// at `end` when set, otherwise the raw returns.
    pub fn window(&self, end: usize, steps: usize) -> Result<WindowBatch> {
        if steps == 0 || end >= self.n_dates() || end + 1 < steps {
            return Err(Error::invalid(alloc::format!(
                "window of {steps} steps ending at date {end} is out of range for {} dates",
                self.n_dates()
            )));
        }
        let start = end + 1 - steps;
        let n = self.n_stocks();
        let width = self.d_company + self.d_market;
        let mut data = Vec::with_capacity(n * steps * width);
        for i in 0..n {
            for d in start..=end {
                data.extend_from_slice(self.company_row(d, i));
                data.extend_from_slice(self.market_row(d));
            }
        }
        let returns = self.returns_on(end).to_vec();
        let targets = self.labels_on(end).map_or_else(|| returns.clone(), <[f64]>::to_vec);
        Ok(WindowBatch {
            dates: self.dates[start..=end].to_vec(),
            tickers: self.tickers.clone(),
            steps,
            d_company: self.d_company,
            d_market: self.d_market,
            features: Matrix::from_vec_unchecked(n * steps, width, data),
            targets,
            returns,
        })
    }
}

/// Features of all stocks over `steps` consecutive dates.
///
/// `features` has one row per (stock, step), stock-major (row `i·T + t`),
/// holding the company features followed by the market features.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    pub steps: usize,
    pub d_company: usize,
    pub d_market: usize,
    pub features: Matrix,
    /// Labels at the final date.
    pub targets: Vec<f64>,
    /// Raw returns at the final date.
    pub returns: Vec<f64>,
}

impl WindowBatch {
    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn target_date(&self) -> &str {
        self.dates.last().map_or("", String::as_str)
    }

    /// Reorders stocks: new stock `k` is old stock `perm[k]`.
    pub fn permute_stocks(&self, perm: &[usize]) -> Result<WindowBatch> {
        check_permutation(perm, self.n_stocks())?;
        let rows: Vec<usize> = perm
            .iter()
            .flat_map(|&i| (0..self.steps).map(move |t| i * self.steps + t))
            .collect();
        Ok(WindowBatch {
            dates: self.dates.clone(),
            tickers: perm.iter().map(|&i| self.tickers[i].clone()).collect(),
            steps: self.steps,
            d_company: self.d_company,
            d_market: self.d_market,
            features: self.features.select_rows(&rows),
            targets: perm.iter().map(|&i| self.targets[i]).collect(),
            returns: perm.iter().map(|&i| self.returns[i]).collect(),
        })
    }
}

/// Sliding windows of length `steps`, every `stride` dates.
pub fn make_windows(panel: &FeaturePanel, steps: usize, stride: usize) -> Result<Vec<WindowBatch>> {
    if steps == 0 || steps > panel.n_dates() {
        return Err(Error::invalid(alloc::format!(
            "window length {steps} must be in 1..={}",
            panel.n_dates()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    (steps - 1..panel.n_dates())
        .step_by(stride)
        .map(|end| panel.window(end, steps))
        .collect()
}

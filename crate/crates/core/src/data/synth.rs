//! Synthetic panels with a planted relational signal.
//!
//! Every feature is i.i.d. standard normal except the signal column, which
//! follows a stationary unit-variance AR(1) per stock. A stock's return is
//! `signal_strength` times the average of the signal feature over its
//! same-sector peers (itself excluded), plus Gaussian noise. Without the
//! industry graph the return is unpredictable from a stock's own history.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDate, Weekday};
use libm::sqrt;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::panel::{FeaturePanel, DEFAULT_D_COMPANY, DEFAULT_D_MARKET};
use crate::error::{Error, Result};
use crate::relations::{build_industry_graph, build_institution_graph, HoldingsMap, RelationGraph, SectorMap};
use crate::rng::{stream, Stream};

/// Company-feature column carrying the planted signal.
pub const SIGNAL_COLUMN: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_dates: usize,
    pub seed: u64,
    pub signal_strength: f64,
    /// AR(1) coefficient of the signal column over time, in [0, 1).
    pub signal_persistence: f64,
    pub noise_std: f64,
    pub n_sectors: usize,
    pub n_institutions: usize,
    pub holdings_per_stock: usize,
    pub d_company: usize,
    pub d_market: usize,
    /// First calendar date (ISO); dates advance over weekdays.
    pub start_date: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_stocks: 50,
            n_dates: 500,
            seed: 0,
            signal_strength: 0.5,
            signal_persistence: 0.9,
            noise_std: 1.0,
            n_sectors: 10,
            n_institutions: 20,
            holdings_per_stock: 3,
            d_company: DEFAULT_D_COMPANY,
            d_market: DEFAULT_D_MARKET,
            start_date: "2020-01-01".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub panel: FeaturePanel,
    pub industry: RelationGraph,
    pub institution: RelationGraph,
    pub sectors: SectorMap,
    pub holdings: HoldingsMap,
}

impl SynthData {
    /// Same-sector peer average of the signal feature on `date`, per stock.
    pub fn peer_signal(&self, date: usize) -> Vec<f64> {
        peer_average(&self.panel, &self.industry, date)
    }
}

fn peer_average(panel: &FeaturePanel, industry: &RelationGraph, date: usize) -> Vec<f64> {
    let n = panel.n_stocks();
    let w = industry.weights();
    (0..n)
        .map(|i| {
            let mut total = 0.0;
            let mut count = 0usize;
            for j in 0..n {
                if j != i && w.get(i, j) > 0.0 {
                    total += panel.company_row(date, j)[SIGNAL_COLUMN];
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                total / count as f64
            }
        })
        .collect()
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.n_stocks < 2 || cfg.n_dates < 2 {
        return Err(Error::invalid("synthetic panel needs at least 2 stocks and 2 dates"));
    }
    if cfg.d_company == SIGNAL_COLUMN || cfg.n_sectors == 0 {
        return Err(Error::invalid(
            "synthetic panel needs a signal column and at least one sector",
        ));
    }
    if cfg.holdings_per_stock > cfg.n_institutions {
        return Err(Error::invalid("holdings_per_stock exceeds n_institutions"));
    }
    if !(0.0..1.0).contains(&cfg.signal_persistence) {
        return Err(Error::invalid("signal_persistence must lie in [0, 1)"));
    }
    if !(cfg.noise_std >= 0.0) || !cfg.signal_strength.is_finite() {
        return Err(Error::invalid("noise_std must be >= 0 and signal_strength finite"));
    }
    let mut rng = stream(cfg.seed, Stream::SyntheticData);
    let (ns, nd) = (cfg.n_stocks, cfg.n_dates);

    let tickers: Vec<String> = (0..ns).map(|i| alloc::format!("S{i:04}")).collect();
    let dates = weekdays(&cfg.start_date, nd)?;

    let mut sectors = SectorMap::new();
    let mut holdings = HoldingsMap::new();
    for t in &tickers {
        let s = rng.random_range(0..cfg.n_sectors);
        sectors.insert(t.clone(), alloc::format!("IND{s:02}"));
        let held: BTreeSet<String> = sample(&mut rng, cfg.n_institutions, cfg.holdings_per_stock)
            .iter()
            .map(|k| alloc::format!("INST{k:03}"))
            .collect();
        holdings.insert(t.clone(), held);
    }
    let industry = build_industry_graph(&sectors, &tickers)?;
    let institution = build_institution_graph(&holdings, &tickers)?;

    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut company: Vec<f64> = (0..nd * ns * cfg.d_company).map(|_| normal()).collect();
    let rho = cfg.signal_persistence;
    let innovation = sqrt(1.0 - rho * rho);
    for d in 1..nd {
        for i in 0..ns {
            let prev = company[((d - 1) * ns + i) * cfg.d_company + SIGNAL_COLUMN];
            let cell = &mut company[(d * ns + i) * cfg.d_company + SIGNAL_COLUMN];
            *cell = rho * prev + innovation * *cell;
        }
    }
    let market: Vec<f64> = (0..nd * cfg.d_market).map(|_| normal()).collect();
    let noise: Vec<f64> = (0..nd * ns).map(|_| normal()).collect();

    let zero_returns = alloc::vec![0.0; nd * ns];
    let features_only = FeaturePanel::new(
        dates.clone(),
        tickers.clone(),
        cfg.d_company,
        cfg.d_market,
        company,
        market,
        zero_returns,
    )?;
    let mut returns = Vec::with_capacity(nd * ns);
    for d in 0..nd {
        let peers = peer_average(&features_only, &industry, d);
        for (i, p) in peers.iter().enumerate() {
            returns.push(cfg.signal_strength * p + cfg.noise_std * noise[d * ns + i]);
        }
    }
    let panel = features_only.with_raw_returns(returns)?;
    Ok(SynthData {
        panel,
        industry,
        institution,
        sectors,
        holdings,
    })
}

fn weekdays(start: &str, count: usize) -> Result<Vec<String>> {
    let mut day = NaiveDate::parse_from_str(start, "%Y-%m-%d")
        .map_err(|_| Error::invalid(alloc::format!("bad start date `{start}`")))?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day.format("%Y-%m-%d").to_string());
        }
        day = day.succ_opt().ok_or_else(|| Error::invalid("date overflow"))?;
    }
    Ok(out)
}

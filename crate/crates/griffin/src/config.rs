//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use griffin_core::data::{DateRange, SynthConfig, DEFAULT_WINSOR_HI, DEFAULT_WINSOR_LO};
use griffin_core::evaluation::{EvalOptions, DEFAULT_TOP_K, PERIODS_PER_YEAR};
use griffin_core::model::ModelConfig;
use griffin_core::training::TrainConfig;

use crate::io::check_date;

/// Everything one command needs: model, training, synthetic-data and
/// evaluation settings, file locations and date splits.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub winsor_lo: f64,
    pub winsor_hi: f64,
    pub top_k: usize,
    pub risk_free_daily: f64,
    pub periods_per_year: usize,
    pub features_csv: Option<PathBuf>,
    pub returns_csv: Option<PathBuf>,
    pub industry_csv: Option<PathBuf>,
    pub holdings_csv: Option<PathBuf>,
    pub industry_graph: Option<PathBuf>,
    pub institution_graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions_csv: Option<PathBuf>,
    pub gate_trace_csv: Option<PathBuf>,
    pub train_start: Option<String>,
    pub train_end: Option<String>,
    pub valid_start: Option<String>,
    pub valid_end: Option<String>,
    pub test_start: Option<String>,
    pub test_end: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: None,
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            winsor_lo: DEFAULT_WINSOR_LO,
            winsor_hi: DEFAULT_WINSOR_HI,
            top_k: DEFAULT_TOP_K,
            risk_free_daily: 0.0,
            periods_per_year: PERIODS_PER_YEAR,
            features_csv: None,
            returns_csv: None,
            industry_csv: None,
            holdings_csv: None,
            industry_graph: None,
            institution_graph: None,
            checkpoint: None,
            predictions_csv: None,
            gate_trace_csv: None,
            train_start: None,
            train_end: None,
            valid_start: None,
            valid_end: None,
            test_start: None,
            test_end: None,
        }
    }
}

mod value {
    use super::*;

    pub fn uint(key: &str, raw: &str) -> Result<usize> {
        raw.parse()
            .map_err(|_| anyhow!("{key}: `{raw}` is not a non-negative integer"))
    }

    pub fn seed(key: &str, raw: &str) -> Result<u64> {
        raw.parse()
            .map_err(|_| anyhow!("{key}: `{raw}` is not a non-negative integer"))
    }

    pub fn float(key: &str, raw: &str) -> Result<f64> {
        let v: f64 = raw.parse().map_err(|_| anyhow!("{key}: `{raw}` is not a number"))?;
        ensure!(v.is_finite(), "{key}: `{raw}` is not finite");
        Ok(v)
    }

    pub fn flag(key: &str, raw: &str) -> Result<bool> {
        match raw {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => bail!("{key}: `{raw}` is not true or false"),
        }
    }

    pub fn date(key: &str, raw: &str) -> Result<String> {
        check_date(raw).with_context(|| key.to_string())?;
        Ok(raw.to_string())
    }

    pub fn path(_: &str, raw: &str) -> Result<Option<PathBuf>> {
        Ok((!raw.is_empty()).then(|| PathBuf::from(raw)))
    }

    pub fn opt_date(key: &str, raw: &str) -> Result<Option<String>> {
        if raw.is_empty() {
            return Ok(None);
        }
        date(key, raw).map(Some)
    }
}

mod show {
    use std::path::PathBuf;

    pub fn uint(v: &usize) -> String {
        v.to_string()
    }
    pub fn seed(v: &u64) -> String {
        v.to_string()
    }
    pub fn float(v: &f64) -> String {
        format!("{v:?}")
    }
    pub fn flag(v: &bool) -> String {
        v.to_string()
    }
    pub fn date(v: &str) -> String {
        v.to_string()
    }
    pub fn path(v: &Option<PathBuf>) -> String {
        v.as_ref().map_or(String::new(), |p| p.display().to_string())
    }
    pub fn opt_date(v: &Option<String>) -> String {
        v.clone().unwrap_or_default()
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+ : $kind:ident,)*) => {
        /// Every accepted configuration key, in echo order.
        pub const KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = value::$kind(key, raw)?,)*
                    _ => bail!("unknown config key `{key}`"),
                }
                Ok(())
            }

            /// `(key, value)` pairs that reproduce this configuration.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, show::$kind(&self.$($field).+)),)*]
            }
        }
    };
}

keys! {
    "out_dir" => out_dir: path,
    "seed" => seed: seed,
    "features_csv" => features_csv: path,
    "returns_csv" => returns_csv: path,
    "industry_csv" => industry_csv: path,
    "holdings_csv" => holdings_csv: path,
    "industry_graph" => industry_graph: path,
    "institution_graph" => institution_graph: path,
    "checkpoint" => checkpoint: path,
    "predictions_csv" => predictions_csv: path,
    "gate_trace_csv" => gate_trace_csv: path,
    "train_start" => train_start: opt_date,
    "train_end" => train_end: opt_date,
    "valid_start" => valid_start: opt_date,
    "valid_end" => valid_end: opt_date,
    "test_start" => test_start: opt_date,
    "test_end" => test_end: opt_date,
    "d_model" => model.d_model: uint,
    "n_heads" => model.n_heads: uint,
    "n_layers" => model.n_layers: uint,
    "dropout" => model.dropout: float,
    "d_company" => model.d_company: uint,
    "d_market" => model.d_market: uint,
    "ffn_multiplier" => model.ffn_multiplier: uint,
    "use_gating" => model.use_gating: flag,
    "use_relation_bias" => model.use_relation_bias: flag,
    "use_cross_stock_attention" => model.use_cross_stock_attention: flag,
    "use_temporal_encoder" => model.use_temporal_encoder: flag,
    "learning_rate" => train.learning_rate: float,
    "weight_decay" => train.weight_decay: float,
    "l2_lambda" => train.l2_lambda: float,
    "epochs" => train.epochs: uint,
    "batch_windows" => train.batch_windows: uint,
    "window" => train.window: uint,
    "stride" => train.stride: uint,
    "grad_clip_norm" => train.grad_clip_norm: float,
    "pct_start" => train.pct_start: float,
    "div_factor" => train.div_factor: float,
    "final_div_factor" => train.final_div_factor: float,
    "beta1" => train.beta1: float,
    "beta2" => train.beta2: float,
    "eps_opt" => train.eps_opt: float,
    "winsor_lo" => winsor_lo: float,
    "winsor_hi" => winsor_hi: float,
    "top_k" => top_k: uint,
    "risk_free_daily" => risk_free_daily: float,
    "periods_per_year" => periods_per_year: uint,
    "n_stocks" => synth.n_stocks: uint,
    "n_dates" => synth.n_dates: uint,
    "signal_strength" => synth.signal_strength: float,
    "signal_persistence" => synth.signal_persistence: float,
    "noise_std" => synth.noise_std: float,
    "n_sectors" => synth.n_sectors: uint,
    "n_institutions" => synth.n_institutions: uint,
    "holdings_per_stock" => synth.holdings_per_stock: uint,
    "start_date" => synth.start_date: date,
}

/// Splits `key=value` (or `key = value`) into trimmed parts.
pub fn split_assignment(s: &str) -> Result<(&str, &str)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("expected `key = value`, got `{s}`"))?;
    let k = k.trim();
    ensure!(!k.is_empty(), "empty key in `{s}`");
    Ok((k, v.trim()))
}

impl RunConfig {
    /// Parses the text of a config file over the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split_once('#').map_or(line, |p| p.0).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line).with_context(|| format!("line {}", n + 1))?;
            ensure!(seen.insert(k.to_string()), "line {}: key `{k}` set twice", n + 1);
            cfg.set(k, v).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    /// Checks cross-field constraints and required keys.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.out_dir.is_some(), "missing required key `out_dir`");
        self.model.validate().context("model settings")?;
        self.train_config().validate().context("training settings")?;
        ensure!(
            0.0 <= self.winsor_lo && self.winsor_lo < self.winsor_hi && self.winsor_hi <= 1.0,
            "winsor_lo/winsor_hi: need 0 <= winsor_lo < winsor_hi <= 1"
        );
        ensure!(self.top_k >= 1, "top_k: must be at least 1");
        ensure!(self.periods_per_year >= 1, "periods_per_year: must be at least 1");
        for (a, b) in [
            ("train_start", "train_end"),
            ("valid_start", "valid_end"),
            ("test_start", "test_end"),
        ] {
            self.range(a, b)?;
        }
        Ok(())
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| anyhow!("missing required key `out_dir`"))
    }

    /// The configured path, or `name` inside the output directory.
    pub fn path_or(&self, path: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        match path {
            Some(p) => Ok(p.clone()),
            None => Ok(self.out_dir()?.join(name)),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Synthetic-data settings with the model's feature widths and the run seed.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            d_company: self.model.d_company,
            d_market: self.model.d_market,
            ..self.synth.clone()
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            steps: self.train.window,
            top_k: self.top_k,
            risk_free_daily: self.risk_free_daily,
            periods_per_year: self.periods_per_year,
        }
    }

    fn value_of(&self, key: &str) -> Option<String> {
        self.entries()
            .into_iter()
            .find(|e| e.0 == key)
            .map(|e| e.1)
            .filter(|v| !v.is_empty())
    }

    fn range(&self, start: &str, end: &str) -> Result<Option<DateRange>> {
        match (self.value_of(start), self.value_of(end)) {
            (None, None) => Ok(None),
            (Some(s), Some(e)) => Ok(Some(DateRange::new(&s, &e).with_context(|| format!("{start}/{end}"))?)),
            (Some(_), None) => bail!("{start} is set but {end} is not"),
            (None, Some(_)) => bail!("{end} is set but {start} is not"),
        }
    }

    /// A date range whose two keys must both be set.
    pub fn required_range(&self, start: &str, end: &str) -> Result<DateRange> {
        self.range(start, end)?
            .ok_or_else(|| anyhow!("missing required keys `{start}` and `{end}`"))
    }

    pub fn optional_range(&self, start: &str, end: &str) -> Result<Option<DateRange>> {
        self.range(start, end)
    }

    /// The resolved configuration as config-file text.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Reads an optional config file and applies `key=value` overrides in order.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            RunConfig::from_text(&text).with_context(|| format!("{}", p.display()))?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = split_assignment(o).context("override")?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

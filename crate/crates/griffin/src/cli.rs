//! Command dispatch.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, ValueEnum};
use griffin_core::data::{preprocess_labels, synth_generate, FeaturePanel};
use griffin_core::evaluation::{backtest_topk, evaluate, gate_analysis, portfolio_stats, DailyPrediction, GateReport};
use griffin_core::model::{Graphs, GriffinModel};
use griffin_core::relations::{
    build_industry_graph, build_institution_graph, validate_relation, RelationGraph, RelationKind,
};
use griffin_core::training::train;

use crate::config::{parse_config, RunConfig};
use crate::{checkpoint, io, report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Write a synthetic panel, returns and memberships.
    GenData,
    /// Build and validate both relation graphs from membership files.
    BuildGraphs,
    /// Train a model and save the checkpoint with the best validation IC.
    Train,
    /// Score the test range and write metrics and predictions.
    Evaluate,
    /// Top-k backtest over stored predictions.
    Backtest,
    /// Split gate activations by extreme market days.
    AnalyzeGates,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::BuildGraphs => "build-graphs",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Backtest => "backtest",
            Command::AnalyzeGates => "analyze-gates",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "griffin",
    version,
    about = "Relation-aware stock ranking: data, training and evaluation"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (same as `--set out_dir=DIR`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Cli {
    /// Resolves the configuration: file, then `--set`, then `--seed` and `--out`.
    pub fn config(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("out_dir={}", o.display()));
        }
        parse_config(self.config.as_deref(), &overrides)
    }
}

/// Parses arguments (without the program name) and runs the command.
pub fn run<I, S>(args: I) -> Result<String>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(std::iter::once("griffin".into()).chain(args.into_iter().map(Into::into)))
        .map_err(|e| anyhow::anyhow!("{}", e.to_string().lines().next().unwrap_or("bad arguments")))?;
    dispatch(cli.command, &cli.config()?)
}

/// Runs one command, writing its artifacts and the resolved configuration
/// under the output directory. Returns a one-line summary.
pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<String> {
    let out = cfg.out_dir()?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join(format!("config_{}.txt", command.name())), cfg.to_text())?;
    match command {
        Command::GenData => gen_data(cfg),
        Command::BuildGraphs => build_graphs(cfg),
        Command::Train => run_train(cfg),
        Command::Evaluate => run_evaluate(cfg),
        Command::Backtest => run_backtest(cfg),
        Command::AnalyzeGates => analyze_gates(cfg),
    }
}

fn gen_data(cfg: &RunConfig) -> Result<String> {
    let data = synth_generate(&cfg.synth_config())?;
    io::write_panel_csv(
        &data.panel,
        &cfg.path_or(&cfg.features_csv, "features.csv")?,
        &cfg.path_or(&cfg.returns_csv, "returns.csv")?,
    )?;
    io::write_sectors(&data.sectors, &cfg.path_or(&cfg.industry_csv, "industry.csv")?)?;
    io::write_holdings(&data.holdings, &cfg.path_or(&cfg.holdings_csv, "holdings.csv")?)?;
    Ok(format!(
        "gen-data: {} stocks x {} dates ({} .. {})",
        data.panel.n_stocks(),
        data.panel.n_dates(),
        data.panel.dates()[0],
        data.panel.dates()[data.panel.n_dates() - 1]
    ))
}

fn load_panel(cfg: &RunConfig) -> Result<FeaturePanel> {
    let panel = io::load_panel_csv(
        &cfg.path_or(&cfg.features_csv, "features.csv")?,
        &cfg.path_or(&cfg.returns_csv, "returns.csv")?,
        cfg.model.d_company,
        cfg.model.d_market,
    )?;
    Ok(preprocess_labels(panel, cfg.winsor_lo, cfg.winsor_hi)?)
}

fn build_graphs(cfg: &RunConfig) -> Result<String> {
    let panel = load_panel(cfg)?;
    let sectors = io::load_sectors(&cfg.path_or(&cfg.industry_csv, "industry.csv")?)?;
    let holdings = io::load_holdings(&cfg.path_or(&cfg.holdings_csv, "holdings.csv")?)?;
    let ind = build_industry_graph(&sectors, panel.tickers())?;
    let inst = build_institution_graph(&holdings, panel.tickers())?;
    for g in [&ind, &inst] {
        let report = validate_relation(g);
        ensure!(
            report.is_valid(),
            "{} graph has {} violations",
            g.kind(),
            report.violations.len()
        );
    }
    io::write_graph_csv(&ind, &cfg.path_or(&cfg.industry_graph, "graph_industry.csv")?)?;
    io::write_graph_csv(&inst, &cfg.path_or(&cfg.institution_graph, "graph_institution.csv")?)?;
    let unmapped = panel.tickers().iter().filter(|t| !sectors.contains_key(*t)).count();
    Ok(format!(
        "build-graphs: {} tickers, {unmapped} without a sector",
        panel.n_stocks()
    ))
}

fn load_graphs(cfg: &RunConfig, panel: &FeaturePanel) -> Result<(RelationGraph, RelationGraph)> {
    let ind = io::load_graph_csv(
        &cfg.path_or(&cfg.industry_graph, "graph_industry.csv")?,
        RelationKind::Industry,
    )?;
    let inst = io::load_graph_csv(
        &cfg.path_or(&cfg.institution_graph, "graph_institution.csv")?,
        RelationKind::Institution,
    )?;
    ind.check_order(panel.tickers())?;
    inst.check_order(panel.tickers())?;
    Ok((ind, inst))
}

fn run_train(cfg: &RunConfig) -> Result<String> {
    let tr = cfg.required_range("train_start", "train_end")?;
    let va = cfg.optional_range("valid_start", "valid_end")?;
    let panel = load_panel(cfg)?;
    let (ind, inst) = load_graphs(cfg, &panel)?;
    let outcome = train(
        &panel,
        Graphs::new(&ind, &inst),
        &cfg.model,
        &cfg.train_config(),
        &tr,
        va.as_ref(),
    )?;
    let out = cfg.out_dir()?;
    checkpoint::save(&outcome.model, &cfg.path_or(&cfg.checkpoint, "checkpoint.bin")?)?;
    report::write_train_log(&outcome.log, &out.join("train_log.csv"))?;
    let last = outcome.log.last().expect("at least one epoch");
    Ok(format!(
        "train: {} epochs, final loss {:.6}, best epoch {} (val IC {:.4})",
        outcome.log.len(),
        last.train_loss,
        outcome.best_epoch,
        outcome.log[outcome.best_epoch - 1].val_ic
    ))
}

fn load_model(cfg: &RunConfig, panel: &FeaturePanel) -> Result<GriffinModel> {
    let model = checkpoint::load(&cfg.path_or(&cfg.checkpoint, "checkpoint.bin")?)?;
    let c = &model.config;
    if (c.d_company, c.d_market) != (panel.d_company(), panel.d_market()) {
        bail!(
            "shape mismatch: checkpoint expects {} company and {} market features, data has {} and {}",
            c.d_company,
            c.d_market,
            panel.d_company(),
            panel.d_market()
        );
    }
    Ok(model)
}

fn run_evaluate(cfg: &RunConfig) -> Result<String> {
    let range = cfg.required_range("test_start", "test_end")?;
    let panel = load_panel(cfg)?;
    let (ind, inst) = load_graphs(cfg, &panel)?;
    let model = load_model(cfg, &panel)?;
    let rep = evaluate(&panel, Graphs::new(&ind, &inst), &model, &range, &cfg.eval_options())?;
    let out = cfg.out_dir()?;
    report::write_metrics(&rep, &out.join("metrics.csv"))?;
    report::write_daily(&rep, &out.join("daily.csv"))?;
    let preds = predictions_of(&panel, &model, &ind, &inst, cfg, &range)?;
    io::write_predictions(&preds, &cfg.path_or(&cfg.predictions_csv, "predictions.csv")?)?;
    if let Some(trace) = &rep.gates {
        report::write_gate_trace(trace, &cfg.path_or(&cfg.gate_trace_csv, "gate_trace.csv")?)?;
    }
    Ok(format!(
        "evaluate: {} days, IC {:.4}, RankIC {:.4}, AR {:.4}",
        rep.daily.len(),
        rep.ic.as_ref().copied().unwrap_or(f64::NAN),
        rep.rank_ic.as_ref().copied().unwrap_or(f64::NAN),
        rep.ar().unwrap_or(f64::NAN)
    ))
}

fn predictions_of(
    panel: &FeaturePanel,
    model: &GriffinModel,
    ind: &RelationGraph,
    inst: &RelationGraph,
    cfg: &RunConfig,
    range: &griffin_core::data::DateRange,
) -> Result<Vec<DailyPrediction>> {
    let ends = griffin_core::training::window_ends(panel, range, cfg.train.window);
    let days =
        griffin_core::evaluation::predict_windows(panel, Graphs::new(ind, inst), model, &ends, cfg.train.window)?;
    Ok(days.into_iter().map(|d| d.prediction).collect())
}

fn run_backtest(cfg: &RunConfig) -> Result<String> {
    let days = io::load_predictions(&cfg.path_or(&cfg.predictions_csv, "predictions.csv")?)?;
    let result = backtest_topk(&days, cfg.top_k)?;
    let stats = portfolio_stats(&result, cfg.risk_free_daily, cfg.periods_per_year);
    let out = cfg.out_dir()?;
    report::write_backtest(&result, &out.join("backtest.csv"))?;
    report::write_stats(&stats, &out.join("backtest_stats.csv"))?;
    Ok(match stats {
        Ok(s) => format!(
            "backtest: {} days, top {}, AR {:.4}, cumulative {:.4}",
            days.len(),
            cfg.top_k,
            s.ar,
            s.cumulative
        ),
        Err(e) => format!(
            "backtest: {} days, top {}, statistics undefined ({e})",
            days.len(),
            cfg.top_k
        ),
    })
}

/// Gate analysis over the evaluated days, using the equal-weighted universe
/// return of each day as the benchmark.
pub fn gate_report(cfg: &RunConfig) -> Result<GateReport> {
    let trace = report::load_gate_trace(&cfg.path_or(&cfg.gate_trace_csv, "gate_trace.csv")?)
        .context("gate trace missing (evaluate writes it only for models with gating)")?;
    let days = io::load_predictions(&cfg.path_or(&cfg.predictions_csv, "predictions.csv")?)?;
    let bench = backtest_topk(&days, 1)?;
    let pairs: Vec<(String, f64)> = bench.dates.into_iter().zip(bench.benchmark).collect();
    Ok(gate_analysis(&trace, &pairs)?)
}

fn analyze_gates(cfg: &RunConfig) -> Result<String> {
    let rep = gate_report(cfg)?;
    let out = cfg.out_dir()?;
    report::write_gate_report(&rep, &out.join("gates.csv"))?;
    report::write_gate_summary(&rep, &out.join("gate_summary.csv"))?;
    Ok(format!(
        "analyze-gates: {} days; industry gate up {:.4} / down {:.4} / normal {:.4}",
        rep.trace.dates.len(),
        rep.up.industry,
        rep.down.industry,
        rep.normal.industry
    ))
}

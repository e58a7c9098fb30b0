//! CSV writers for metrics, daily series, training logs and gate analysis.

use std::path::Path;

use anyhow::{ensure, Result};
use griffin_core::evaluation::{BacktestResult, GateReport, GateTrace, MetricsReport, PortfolioStats};
use griffin_core::training::EpochLog;

use crate::io::{fmt_float, parse_float, reader, writer};

fn or_nan(v: &griffin_core::Result<f64>) -> String {
    fmt_float(*v.as_ref().unwrap_or(&f64::NAN))
}

fn opt(v: Option<f64>) -> String {
    fmt_float(v.unwrap_or(f64::NAN))
}

fn stats_rows(stats: &griffin_core::Result<PortfolioStats>) -> Vec<(&'static str, String)> {
    match stats {
        Ok(s) => vec![
            ("ar", fmt_float(s.ar)),
            ("ir", or_nan(&s.ir)),
            ("sharpe", or_nan(&s.sharpe)),
            ("cumulative_return", fmt_float(s.cumulative)),
            ("annualized_volatility", fmt_float(s.volatility)),
        ],
        Err(_) => ["ar", "ir", "sharpe", "cumulative_return", "annualized_volatility"]
            .into_iter()
            .map(|k| (k, fmt_float(f64::NAN)))
            .collect(),
    }
}

fn write_pairs(rows: &[(&str, String)], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// `metric,value` summary; undefined statistics are written as NaN.
pub fn write_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut rows = vec![
        ("ic", or_nan(&report.ic)),
        ("icir", or_nan(&report.icir)),
        ("rank_ic", or_nan(&report.rank_ic)),
        ("rank_icir", or_nan(&report.rank_icir)),
    ];
    rows.extend(stats_rows(&report.stats));
    rows.push(("days", report.daily.len().to_string()));
    rows.push(("skipped_ic_days", report.skipped_ic.to_string()));
    rows.push(("skipped_rank_ic_days", report.skipped_rank_ic.to_string()));
    write_pairs(&rows, path)
}

/// Reads any `metric,value` file into pairs.
pub fn load_metrics(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = reader(path)?;
    ensure!(
        rdr.headers()?.iter().eq(["metric", "value"]),
        "{}: header must be `metric,value`",
        path.display()
    );
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        ensure!(rec.len() == 2, "{}: expected 2 columns", path.display());
        let line = rec.position().map_or(0, |p| p.line());
        let v = if rec[1].trim() == "NaN" {
            f64::NAN
        } else {
            parse_float(&rec[1], "value", line, path)?
        };
        out.push((rec[0].to_string(), v));
    }
    Ok(out)
}

pub fn write_daily(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "ic", "rank_ic", "portfolio_return", "benchmark_return"])?;
    for d in &report.daily {
        w.write_record([
            d.date.clone(),
            opt(d.ic),
            opt(d.rank_ic),
            fmt_float(d.portfolio_return),
            fmt_float(d.benchmark_return),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_train_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "train_loss", "val_ic", "lr"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            fmt_float(e.train_loss),
            fmt_float(e.val_ic),
            fmt_float(e.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_backtest(result: &BacktestResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "portfolio_return", "benchmark_return", "excess_return"])?;
    for (i, d) in result.dates.iter().enumerate() {
        let (p, b) = (result.portfolio[i], result.benchmark[i]);
        w.write_record([d.clone(), fmt_float(p), fmt_float(b), fmt_float(p - b)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stats(stats: &griffin_core::Result<PortfolioStats>, path: &Path) -> Result<()> {
    write_pairs(&stats_rows(stats), path)
}

/// Per-date mean gates, `date,mean_gate_ind,mean_gate_inst`.
pub fn write_gate_trace(trace: &GateTrace, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "mean_gate_ind", "mean_gate_inst"])?;
    for (i, d) in trace.dates.iter().enumerate() {
        w.write_record([d.clone(), fmt_float(trace.industry[i]), fmt_float(trace.institution[i])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_gate_trace(path: &Path) -> Result<GateTrace> {
    let mut rdr = reader(path)?;
    ensure!(
        rdr.headers()?.iter().eq(["date", "mean_gate_ind", "mean_gate_inst"]),
        "{}: header must be `date,mean_gate_ind,mean_gate_inst`",
        path.display()
    );
    let mut t = GateTrace::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        ensure!(rec.len() == 3, "{} line {line}: expected 3 columns", path.display());
        t.dates.push(rec[0].trim().to_string());
        t.industry.push(parse_float(&rec[1], "mean_gate_ind", line, path)?);
        t.institution.push(parse_float(&rec[2], "mean_gate_inst", line, path)?);
    }
    Ok(t)
}

/// Per-date gates with their extreme-day group.
pub fn write_gate_report(report: &GateReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "mean_gate_ind", "mean_gate_inst", "group"])?;
    let t = &report.trace;
    for (i, d) in t.dates.iter().enumerate() {
        w.write_record([
            d.clone(),
            fmt_float(t.industry[i]),
            fmt_float(t.institution[i]),
            report.groups[i].as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `group,days,mean_gate_ind,mean_gate_inst` for the up, down and normal groups.
pub fn write_gate_summary(report: &GateReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["group", "days", "mean_gate_ind", "mean_gate_inst"])?;
    for (name, g) in [("up", &report.up), ("down", &report.down), ("normal", &report.normal)] {
        w.write_record([
            name.to_string(),
            g.days.to_string(),
            fmt_float(g.industry),
            fmt_float(g.institution),
        ])?;
    }
    w.flush()?;
    Ok(())
}

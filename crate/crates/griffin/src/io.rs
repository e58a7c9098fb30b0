//! CSV formats for panels, memberships, relation graphs and predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use chrono::NaiveDate;
use griffin_core::data::FeaturePanel;
use griffin_core::evaluation::DailyPrediction;
use griffin_core::numerics::Matrix;
use griffin_core::relations::{validate_relation, HoldingsMap, RelationGraph, RelationKind, SectorMap};

/// Formats a float with 17 significant digits, enough to round-trip exactly.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub(crate) fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

pub(crate) fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::Writer::from_writer(file))
}

fn header(rdr: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>> {
    Ok(rdr
        .headers()
        .with_context(|| format!("{}: unreadable header", path.display()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect())
}

/// Iterates data rows as `(line, fields)`, checking the column count.
fn rows<'a>(
    rdr: &'a mut csv::Reader<File>,
    path: &Path,
    width: usize,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + 'a {
    let name = path.display().to_string();
    rdr.records().map(move |rec| {
        let rec = rec.with_context(|| format!("{name}: malformed row"))?;
        let line = rec.position().map_or(0, |p| p.line());
        ensure!(
            rec.len() == width,
            "{name} line {line}: expected {width} columns, found {}",
            rec.len()
        );
        Ok((line, rec))
    })
}

pub(crate) fn parse_float(s: &str, what: &str, line: u64, path: &Path) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| anyhow!("{} line {line}: cannot parse {what} `{s}`", path.display()))?;
    ensure!(v.is_finite(), "{} line {line}: non-finite {what}", path.display());
    Ok(v)
}

/// Checks for a canonical `YYYY-MM-DD` date.
pub fn check_date(s: &str) -> Result<()> {
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| anyhow!("`{s}` is not a YYYY-MM-DD date"))?;
    ensure!(d.format("%Y-%m-%d").to_string() == s, "`{s}` is not a YYYY-MM-DD date");
    Ok(())
}

fn expected_feature_header(d_company: usize, d_market: usize) -> Vec<String> {
    let mut h = vec!["date".to_string(), "ticker".to_string()];
    h.extend((1..=d_company).map(|k| format!("c{k}")));
    h.extend((1..=d_market).map(|k| format!("m{k}")));
    h
}

type Key = (String, String);

/// Reads a features CSV and a returns CSV into a dense panel. Dates are
/// sorted ascending and tickers lexicographically; both files must cover
/// exactly the same (date, ticker) cells.
pub fn load_panel_csv(features: &Path, returns: &Path, d_company: usize, d_market: usize) -> Result<FeaturePanel> {
    let want = expected_feature_header(d_company, d_market);
    let mut rdr = reader(features)?;
    let got = header(&mut rdr, features)?;
    if got.len() != want.len() {
        bail!(
            "{}: expected {} columns (date, ticker, c1..c{d_company}, m1..m{d_market}), found {}",
            features.display(),
            want.len(),
            got.len()
        );
    }
    if let Some((g, w)) = got.iter().zip(&want).find(|(g, w)| g != w) {
        bail!("{}: header column `{g}` where `{w}` was expected", features.display());
    }

    let mut company: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut market: BTreeMap<String, (u64, Vec<f64>)> = BTreeMap::new();
    for row in rows(&mut rdr, features, want.len()) {
        let (line, rec) = row?;
        let (date, ticker) = (rec[0].trim().to_string(), rec[1].trim().to_string());
        check_date(&date).with_context(|| format!("{} line {line}", features.display()))?;
        let values: Vec<f64> = (2..rec.len())
            .map(|c| parse_float(&rec[c], &want[c], line, features))
            .collect::<Result<_>>()?;
        let (c, m) = values.split_at(d_company);
        match market.get(&date) {
            Some((first, prev)) => ensure!(
                prev.as_slice() == m,
                "{} line {line}: market features on {date} differ from line {first}",
                features.display()
            ),
            None => {
                market.insert(date.clone(), (line, m.to_vec()));
            }
        }
        if company.insert((date.clone(), ticker.clone()), c.to_vec()).is_some() {
            bail!("{} line {line}: duplicate key ({date}, {ticker})", features.display());
        }
    }

    let mut rdr = reader(returns)?;
    let got = header(&mut rdr, returns)?;
    ensure!(
        got == ["date", "ticker", "return"],
        "{}: header must be `date,ticker,return`",
        returns.display()
    );
    let mut rets: BTreeMap<Key, f64> = BTreeMap::new();
    for row in rows(&mut rdr, returns, 3) {
        let (line, rec) = row?;
        let key = (rec[0].trim().to_string(), rec[1].trim().to_string());
        check_date(&key.0).with_context(|| format!("{} line {line}", returns.display()))?;
        let v = parse_float(&rec[2], "return", line, returns)?;
        if rets.insert(key.clone(), v).is_some() {
            bail!(
                "{} line {line}: duplicate key ({}, {})",
                returns.display(),
                key.0,
                key.1
            );
        }
    }

    if let Some((d, t)) = company.keys().find(|k| !rets.contains_key(*k)) {
        bail!("({d}, {t}) has features but no return");
    }
    if let Some((d, t)) = rets.keys().find(|k| !company.contains_key(*k)) {
        bail!("({d}, {t}) has a return but no features");
    }
    ensure!(!company.is_empty(), "{}: no data rows", features.display());

    let dates: Vec<String> = market.keys().cloned().collect();
    let tickers: Vec<String> = company
        .keys()
        .map(|k| k.1.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (nd, ns) = (dates.len(), tickers.len());
    let mut comp = Vec::with_capacity(nd * ns * d_company);
    let mut ret = Vec::with_capacity(nd * ns);
    for d in &dates {
        for t in &tickers {
            let key = (d.clone(), t.clone());
            let c = company.get(&key).ok_or_else(|| anyhow!("missing row ({d}, {t})"))?;
            comp.extend_from_slice(c);
            ret.push(rets[&key]);
        }
    }
    let mkt: Vec<f64> = market.into_values().flat_map(|(_, m)| m).collect();
    Ok(FeaturePanel::new(dates, tickers, d_company, d_market, comp, mkt, ret)?)
}

/// Writes the two files read by [`load_panel_csv`].
pub fn write_panel_csv(panel: &FeaturePanel, features: &Path, returns: &Path) -> Result<()> {
    let mut w = writer(features)?;
    w.write_record(expected_feature_header(panel.d_company(), panel.d_market()))?;
    let mut r = writer(returns)?;
    r.write_record(["date", "ticker", "return"])?;
    for (d, date) in panel.dates().iter().enumerate() {
        let market: Vec<String> = panel.market_row(d).iter().map(|v| fmt_float(*v)).collect();
        for (i, ticker) in panel.tickers().iter().enumerate() {
            let mut rec = vec![date.clone(), ticker.clone()];
            rec.extend(panel.company_row(d, i).iter().map(|v| fmt_float(*v)));
            rec.extend(market.iter().cloned());
            w.write_record(&rec)?;
            r.write_record([date.as_str(), ticker.as_str(), &fmt_float(panel.returns_on(d)[i])])?;
        }
    }
    w.flush()?;
    r.flush()?;
    Ok(())
}

/// Reads a `ticker,sector` file.
pub fn load_sectors(path: &Path) -> Result<SectorMap> {
    let mut rdr = reader(path)?;
    let got = header(&mut rdr, path)?;
    if let Some(c) = got.iter().find(|c| !matches!(c.as_str(), "ticker" | "sector")) {
        bail!("{}: unknown column `{c}` (expected ticker,sector)", path.display());
    }
    ensure!(
        got == ["ticker", "sector"],
        "{}: header must be `ticker,sector`",
        path.display()
    );
    let mut out = SectorMap::new();
    for row in rows(&mut rdr, path, 2) {
        let (line, rec) = row?;
        let (t, s) = (rec[0].trim(), rec[1].trim());
        if out.insert(t.to_string(), s.to_string()).is_some() {
            bail!("{} line {line}: ticker {t} listed twice", path.display());
        }
    }
    Ok(out)
}

/// Reads a `ticker,institution[,weight]` file; weights are ignored.
pub fn load_holdings(path: &Path) -> Result<HoldingsMap> {
    let mut rdr = reader(path)?;
    let got = header(&mut rdr, path)?;
    if let Some(c) = got
        .iter()
        .find(|c| !matches!(c.as_str(), "ticker" | "institution" | "weight"))
    {
        bail!(
            "{}: unknown column `{c}` (expected ticker,institution[,weight])",
            path.display()
        );
    }
    ensure!(
        got.len() >= 2 && got[0] == "ticker" && got[1] == "institution" && got.len() <= 3,
        "{}: header must be `ticker,institution` with an optional `weight`",
        path.display()
    );
    let mut out = HoldingsMap::new();
    for row in rows(&mut rdr, path, got.len()) {
        let (_, rec) = row?;
        out.entry(rec[0].trim().to_string())
            .or_default()
            .insert(rec[1].trim().to_string());
    }
    Ok(out)
}

pub fn write_sectors(map: &SectorMap, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["ticker", "sector"])?;
    for (t, s) in map {
        w.write_record([t, s])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_holdings(map: &HoldingsMap, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["ticker", "institution"])?;
    for (t, set) in map {
        for inst in set {
            w.write_record([t, inst])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Square matrix with a ticker header row and column.
pub fn write_graph_csv(g: &RelationGraph, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let mut head = vec!["ticker".to_string()];
    head.extend(g.tickers().iter().cloned());
    w.write_record(&head)?;
    for (i, t) in g.tickers().iter().enumerate() {
        let mut rec = vec![t.clone()];
        rec.extend(g.weights().row(i).iter().map(|v| fmt_float(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a graph written by [`write_graph_csv`] and rejects it unless it
/// passes [`validate_relation`].
pub fn load_graph_csv(path: &Path, kind: RelationKind) -> Result<RelationGraph> {
    let mut rdr = reader(path)?;
    let head = header(&mut rdr, path)?;
    ensure!(
        head.first().map(String::as_str) == Some("ticker"),
        "{}: first column must be `ticker`",
        path.display()
    );
    let tickers: Vec<String> = head[1..].to_vec();
    let n = tickers.len();
    let mut data = Vec::with_capacity(n * n);
    let mut count = 0;
    for row in rows(&mut rdr, path, n + 1) {
        let (line, rec) = row?;
        ensure!(count < n, "{} line {line}: more rows than tickers", path.display());
        ensure!(
            rec[0].trim() == tickers[count],
            "{} line {line}: row ticker `{}` where `{}` was expected",
            path.display(),
            rec[0].trim(),
            tickers[count]
        );
        for c in 1..=n {
            data.push(parse_float(&rec[c], "weight", line, path)?);
        }
        count += 1;
    }
    ensure!(count == n, "{}: {count} rows for {n} tickers", path.display());
    let g = RelationGraph::new(tickers, Matrix::new(n, n, data)?, kind)?;
    let report = validate_relation(&g);
    if let Some(v) = report.violations.first() {
        bail!(
            "{}: invalid {kind} graph ({} violations, first {v:?})",
            path.display(),
            report.violations.len()
        );
    }
    Ok(g)
}

/// Long-format predictions: one `date,ticker,score,return` row per stock.
pub fn write_predictions(days: &[DailyPrediction], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "ticker", "score", "return"])?;
    for d in days {
        for i in 0..d.len() {
            w.write_record([
                &d.date,
                &d.tickers[i],
                &fmt_float(d.scores[i]),
                &fmt_float(d.returns[i]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `(date, tickers, scores, returns)` collected for one date.
type DayRows = (String, Vec<String>, Vec<f64>, Vec<f64>);

/// Reads [`write_predictions`] output back, grouped by date in file order.
pub fn load_predictions(path: &Path) -> Result<Vec<DailyPrediction>> {
    let mut rdr = reader(path)?;
    ensure!(
        header(&mut rdr, path)? == ["date", "ticker", "score", "return"],
        "{}: header must be `date,ticker,score,return`",
        path.display()
    );
    let mut days: Vec<DayRows> = Vec::new();
    for row in rows(&mut rdr, path, 4) {
        let (line, rec) = row?;
        let date = rec[0].trim();
        if days.last().is_none_or(|d| d.0 != date) {
            ensure!(
                days.iter().all(|d| d.0 != date),
                "{} line {line}: rows of {date} are not contiguous",
                path.display()
            );
            days.push((date.to_string(), Vec::new(), Vec::new(), Vec::new()));
        }
        let day = days.last_mut().expect("pushed above");
        day.1.push(rec[1].trim().to_string());
        day.2.push(parse_float(&rec[2], "score", line, path)?);
        day.3.push(parse_float(&rec[3], "return", line, path)?);
    }
    days.into_iter()
        .map(|(d, t, s, r)| Ok(DailyPrediction::new(&d, t, s, r)?))
        .collect()
}

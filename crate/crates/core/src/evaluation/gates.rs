use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Share of dates labelled extreme at each tail.
pub const EXTREME_SHARE: f64 = 0.05;

/// Mean gate activation per relation on each evaluated date.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GateTrace {
    pub dates: Vec<String>,
    pub industry: Vec<f64>,
    pub institution: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DayGroup {
    Up,
    Down,
    Normal,
}

impl DayGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            DayGroup::Up => "up",
            DayGroup::Down => "down",
            DayGroup::Normal => "normal",
        }
    }
}

impl fmt::Display for DayGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean gates of one group of dates; NaN for an empty group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMeans {
    pub days: usize,
    pub industry: f64,
    pub institution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub trace: GateTrace,
    pub groups: Vec<DayGroup>,
    pub up_dates: Vec<String>,
    pub down_dates: Vec<String>,
    pub up: GroupMeans,
    pub down: GroupMeans,
    pub normal: GroupMeans,
}

/// Splits the traced dates by benchmark return into extreme-up,
/// extreme-down and normal days and averages the gates of each group.
pub fn gate_analysis(trace: &GateTrace, benchmark: &[(String, f64)]) -> Result<GateReport> {
    let d = trace.dates.len();
    if d == 0 {
        return Err(Error::invalid("empty gate trace"));
    }
    if trace.industry.len() != d || trace.institution.len() != d {
        return Err(Error::invalid("gate trace series differ in length"));
    }
    let lookup: BTreeMap<&str, f64> = benchmark.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let rets: Vec<f64> = trace
        .dates
        .iter()
        .map(|date| {
            lookup
                .get(date.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(alloc::format!("no benchmark return on {date}")))
        })
        .collect::<Result<_>>()?;

    let n_extreme = libm::ceil(EXTREME_SHARE * d as f64) as usize;
    let mut by_date: Vec<usize> = (0..d).collect();
    by_date.sort_by(|&a, &b| trace.dates[a].cmp(&trace.dates[b]));
    let mut up_order = by_date.clone();
    up_order.sort_by(|&a, &b| rets[b].total_cmp(&rets[a]));
    let mut down_order = by_date;
    down_order.sort_by(|&a, &b| rets[a].total_cmp(&rets[b]));

    let mut groups = alloc::vec![DayGroup::Normal; d];
    for &i in up_order.iter().take(n_extreme) {
        groups[i] = DayGroup::Up;
    }
    let mut taken = 0;
    for &i in &down_order {
        if taken == n_extreme {
            break;
        }
        if groups[i] == DayGroup::Normal {
            groups[i] = DayGroup::Down;
            taken += 1;
        }
    }

    let means = |g: DayGroup| {
        let idx: Vec<usize> = (0..d).filter(|&i| groups[i] == g).collect();
        let avg = |s: &[f64]| idx.iter().map(|&i| s[i]).sum::<f64>() / idx.len() as f64;
        GroupMeans {
            days: idx.len(),
            industry: avg(&trace.industry),
            institution: avg(&trace.institution),
        }
    };
    let dates_of = |g: DayGroup| {
        let mut v: Vec<String> = (0..d)
            .filter(|&i| groups[i] == g)
            .map(|i| trace.dates[i].clone())
            .collect();
        v.sort();
        v
    };
    Ok(GateReport {
        up_dates: dates_of(DayGroup::Up),
        down_dates: dates_of(DayGroup::Down),
        up: means(DayGroup::Up),
        down: means(DayGroup::Down),
        normal: means(DayGroup::Normal),
        trace: trace.clone(),
        groups,
    })
}

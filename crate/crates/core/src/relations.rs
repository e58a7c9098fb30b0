//! Industry and institutional relation graphs over a fixed ticker order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Ticker → sector id.
pub type SectorMap = BTreeMap<String, String>;
/// Ticker → set of holder (institution) ids.
pub type HoldingsMap = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    Industry,
    Institution,
}

impl RelationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Industry => "industry",
            RelationKind::Institution => "institution",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Symmetric association-strength matrix over an ordered ticker list.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    tickers: Vec<String>,
    weights: Matrix,
    kind: RelationKind,
}

impl RelationGraph {
    /// Wraps a weight matrix. Only the shape is checked here; use
    /// [`validate_relation`] for the structural invariants.
    pub fn new(tickers: Vec<String>, weights: Matrix, kind: RelationKind) -> Result<Self> {
        let n = tickers.len();
        if weights.shape() != (n, n) {
            return Err(Error::Shape {
                op: "relation graph",
                left: (n, n),
                right: weights.shape(),
            });
        }
        Ok(RelationGraph { tickers, weights, kind })
    }

    /// Graph with self-loops only.
    pub fn self_loops(tickers: Vec<String>, kind: RelationKind) -> Self {
        let n = tickers.len();
        RelationGraph {
            tickers,
            weights: Matrix::identity(n),
            kind,
        }
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn kind(&self) -> RelationKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }

    /// Reorders nodes: new node `k` is old node `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.len())?;
        let n = perm.len();
        let mut w = Matrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                w.set(a, b, self.weights.get(perm[a], perm[b]));
            }
        }
        Ok(RelationGraph {
            tickers: perm.iter().map(|&i| self.tickers[i].clone()).collect(),
            weights: w,
            kind: self.kind,
        })
    }

    pub fn check_order(&self, tickers: &[String]) -> Result<()> {
        if self.tickers != tickers {
            return Err(Error::invalid(alloc::format!(
                "{} graph ticker order does not match the batch",
                self.kind
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = alloc::vec![false; n];
    if perm.len() != n {
        return Err(Error::invalid("permutation length mismatch"));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::invalid("not a permutation"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Same-sector indicator with unit diagonal. Tickers without a sector
/// connect only to themselves.
pub fn build_industry_graph(membership: &SectorMap, tickers: &[String]) -> Result<RelationGraph> {
    if tickers.is_empty() {
        return Err(Error::invalid("industry graph needs at least one ticker"));
    }
    let n = tickers.len();
    let sectors: Vec<Option<&String>> = tickers.iter().map(|t| membership.get(t)).collect();
    let mut w = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                if let (Some(a), Some(b)) = (sectors[i], sectors[j]) {
                    if a == b {
                        w.set(i, j, 1.0);
                    }
                }
            }
        }
    }
    RelationGraph::new(tickers.to_vec(), w, RelationKind::Industry)
}

/// Jaccard similarity of holder sets, unit diagonal.
pub fn build_institution_graph(holdings: &HoldingsMap, tickers: &[String]) -> Result<RelationGraph> {
    if tickers.is_empty() {
        return Err(Error::invalid("institution graph needs at least one ticker"));
    }
    let n = tickers.len();
    let empty = BTreeSet::new();
    let sets: Vec<&BTreeSet<String>> = tickers.iter().map(|t| holdings.get(t).unwrap_or(&empty)).collect();
    let mut w = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = jaccard(sets[i], sets[j]);
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    RelationGraph::new(tickers.to_vec(), w, RelationKind::Institution)
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Asymmetric { i: usize, j: usize },
    OutOfRange { i: usize, j: usize, value: f64 },
    Diagonal { i: usize, value: f64 },
    NonFinite { i: usize, j: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every symmetry, range, diagonal, and finiteness violation.
/// Asymmetric pairs are reported once, with `i < j`.
pub fn validate_relation(g: &RelationGraph) -> ValidationReport {
    let w = &g.weights;
    let n = g.len();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = w.get(i, j);
            if !v.is_finite() {
                violations.push(Violation::NonFinite { i, j });
                continue;
            }
            if !(0.0..=1.0).contains(&v) {
                violations.push(Violation::OutOfRange { i, j, value: v });
            }
            if i == j && v != 1.0 {
                violations.push(Violation::Diagonal { i, value: v });
            }
            if i < j && (v - w.get(j, i)).abs() > SYMMETRY_TOL {
                violations.push(Violation::Asymmetric { i, j });
            }
        }
    }
    ValidationReport { violations }
}

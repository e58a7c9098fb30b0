#![allow(dead_code)]

use griffin_core::data::{synth_generate, FeaturePanel, SynthConfig, SynthData, WindowBatch};
use griffin_core::model::ModelConfig;
use griffin_core::numerics::Matrix;
use griffin_core::relations::{RelationGraph, RelationKind};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        dropout: 0.0,
        d_company: 5,
        d_market: 3,
        ffn_multiplier: 2,
        ..ModelConfig::default()
    }
}

pub fn synth(n: usize, d: usize, seed: u64, dc: usize, dm: usize) -> SynthData {
    synth_generate(&SynthConfig {
        n_stocks: n,
        n_dates: d,
        seed,
        d_company: dc,
        d_market: dm,
        n_sectors: 2.max(n / 4),
        n_institutions: 6,
        holdings_per_stock: 2,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// A small batch plus two nontrivial graphs (weights strictly inside (0,1) off the diagonal).
pub fn tiny_problem(n: usize, steps: usize, seed: u64) -> (WindowBatch, RelationGraph, RelationGraph) {
    let data = synth(n, steps + 2, seed, 5, 3);
    let panel: FeaturePanel = data.panel;
    let batch = panel.window(steps + 1, steps).unwrap();
    let tickers = batch.tickers.clone();
    let mut ind = Matrix::identity(n).into_vec();
    let mut inst = Matrix::identity(n).into_vec();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                ind[i * n + j] = if (i + j) % 2 == 0 { 1.0 } else { 0.0 };
                inst[i * n + j] = 0.1 + 0.05 * ((i + j) % 5) as f64;
            }
        }
    }
    let ind = RelationGraph::new(tickers.clone(), Matrix::new(n, n, ind).unwrap(), RelationKind::Industry).unwrap();
    let inst = RelationGraph::new(tickers, Matrix::new(n, n, inst).unwrap(), RelationKind::Institution).unwrap();
    (batch, ind, inst)
}

/// Plain nested-vector reference implementations, independent of the tape.
pub mod oracle {
    pub type M = Vec<Vec<f64>>;

    pub fn from(m: &griffin_core::numerics::Matrix) -> M {
        (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
    }

    pub fn mm(a: &M, b: &M) -> M {
        let (n, k, p) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0; p]; n];
        for i in 0..n {
            for j in 0..p {
                let mut s = 0.0;
                for t in 0..k {
                    s += a[i][t] * b[t][j];
                }
                out[i][j] = s;
            }
        }
        out
    }

    pub fn softmax(row: &[f64]) -> Vec<f64> {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    /// Multi-head attention over the rows of `x`, before the output map.
    pub fn mha(x: &M, wq: &M, wk: &M, wv: &M, heads: usize, bias: Option<(f64, &M)>) -> M {
        let (q, k, v) = (mm(x, wq), mm(x, wk), mm(x, wv));
        let n = x.len();
        let d = q[0].len();
        let dk = d / heads;
        let mut out = vec![vec![0.0; d]; n];
        for h in 0..heads {
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        let dot: f64 = (0..dk).map(|c| q[i][h * dk + c] * k[j][h * dk + c]).sum();
                        dot / (dk as f64).sqrt() + bias.map_or(0.0, |(a, r)| a * r[i][j])
                    })
                    .collect();
                let p = softmax(&logits);
                for c in 0..dk {
                    out[i][h * dk + c] = (0..n).map(|j| p[j] * v[j][h * dk + c]).sum();
                }
            }
        }
        out
    }

    pub fn layer_norm(x: &M, gamma: &[f64], beta: &[f64], eps: f64) -> M {
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                row.iter()
                    .enumerate()
                    .map(|(c, v)| (v - mean) / (var + eps).sqrt() * gamma[c] + beta[c])
                    .collect()
            })
            .collect()
    }

    pub fn add(a: &M, b: &M) -> M {
        a.iter()
            .zip(b)
            .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
            .collect()
    }

    pub fn add_row(a: &M, b: &[f64]) -> M {
        a.iter()
            .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect()
    }

    pub fn relu(a: &M) -> M {
        a.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect()
    }

    pub fn max_abs_diff(a: &M, b: &M) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Pearson correlation computed term by term.
    pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut dx = 0.0;
        let mut dy = 0.0;
        for i in 0..x.len() {
            num += (x[i] - mx) * (y[i] - my);
            dx += (x[i] - mx).powi(2);
            dy += (y[i] - my).powi(2);
        }
        num / (dx * dy).sqrt()
    }

    /// Ranks by counting: rank = 1 + #smaller + (#equal − 1)/2.
    pub fn avg_ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|a| {
                let less = x.iter().filter(|b| *b < a).count() as f64;
                let eq = x.iter().filter(|b| *b == a).count() as f64;
                1.0 + less + (eq - 1.0) / 2.0
            })
            .collect()
    }
}

//! Reverse-mode differentiation over matrix-valued operations.
//!
//! Every operation applied through a [`Tape`] appends a node holding its
//! output value and enough context to propagate adjoints. [`Tape::backward`]
//! walks the nodes in exact reverse order of recording and writes parameter
//! gradients into a [`ParamStore`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use rand::RngCore;

use super::matrix::{matmul_nt_into, matmul_tn_into, order_invariant_sum, Matrix};
use super::ops::{check_rate, dropout_mask, relu, row_moments, sigmoid};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row partition for grouped attention. Every group has the same size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    groups: Vec<Vec<usize>>,
}

impl Groups {
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let size = groups.first().map_or(0, Vec::len);
        if size == 0 || groups.iter().any(|g| g.len() != size) {
            return Err(Error::invalid("attention groups must be non-empty and equal-sized"));
        }
        Ok(Groups { groups })
    }

    /// `count` groups of `size` consecutive rows.
    pub fn contiguous(count: usize, size: usize) -> Result<Self> {
        Self::new((0..count).map(|g| (g * size..(g + 1) * size).collect()).collect())
    }

    /// `count` groups taking every `count`-th row: group `g` holds rows
    /// `g, g + count, g + 2·count, ...` (`size` rows each).
    pub fn strided(count: usize, size: usize) -> Result<Self> {
        Self::new((0..count).map(|g| (0..size).map(|i| i * count + g).collect()).collect())
    }

    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.groups.iter().map(Vec::as_slice)
    }

    fn max_row(&self) -> usize {
        self.groups.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// Additive logit bias `scale · weights` for grouped attention.
#[derive(Debug, Clone)]
pub struct AttentionBias {
    pub scale: Var,
    pub weights: Matrix,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Mask(Var, Matrix),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRowGroups(Var, usize),
    Sum(Var),
    SumSquares(Var),
    MeanSquaredError(Var, Matrix),
    Attention(AttentionCtx),
    Propagate {
        v: Var,
        groups: Groups,
        weights: Matrix,
    },
}

#[derive(Debug)]
struct AttentionCtx {
    q: Var,
    k: Var,
    v: Var,
    groups: Groups,
    heads: usize,
    bias: Option<AttentionBias>,
    /// Softmax output per (group, head), before dropout.
    probs: Vec<Matrix>,
    masks: Option<Vec<Matrix>>,
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Ordered record of a forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: BTreeMap<String, Var>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.param_vars.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Attention probabilities (before dropout) recorded by a grouped
    /// attention node, one matrix per (group, head) in group-major order.
    pub fn attention_probs(&self, v: Var) -> Option<&[Matrix]> {
        match &self.nodes[v.0].op {
            Op::Attention(ctx) => Some(&ctx.probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::Tape("tape already consumed by backward; clear it first".into()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a named parameter; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Param(name.to_string()))?;
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        self.push(value, Op::Mul(a, b))
    }

    /// `a + 1·row`, broadcasting a `1 × cols` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(Error::Shape {
                op: "add_row",
                left: (ar, ac),
                right: self.shape(row),
            });
        }
        let mut value = self.value(a).clone();
        let b = self.value(row).as_slice().to_vec();
        for r in 0..ar {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(relu);
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = super::ops::softmax_rows(self.value(a))?;
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with `1 × cols` gamma and beta.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if self.shape(gamma) != (1, cols) || self.shape(beta) != (1, cols) {
            return Err(Error::Shape {
                op: "layer_norm",
                left: (rows, cols),
                right: self.shape(gamma),
            });
        }
        let xv = self.value(x);
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let mut xhat = xv.clone();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let (mean, is) = row_moments(xv.row(r), eps);
            inv_std.push(is);
            for c in 0..cols {
                let h = (xv.get(r, c) - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Inverted dropout with a mask drawn from `rng`. A zero rate records nothing.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut dyn RngCore) -> Result<Var> {
        check_rate(rate)?;
        if rate == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.shape(a);
        let mask = dropout_mask(r, c, rate, rng)?;
        let value = self.value(a).hadamard(&mask)?;
        self.push(value, Op::Mask(a, mask))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(
            Matrix::from_vec_unchecked(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                left: (r, c),
                right: (start, len),
            });
        }
        let value = self.value(a).slice_cols(start, len);
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Shape {
                op: "gather_rows",
                left: (r, c),
                right: (bad, 0),
            });
        }
        let value = self.value(a).select_rows(indices);
        self.push(value, Op::GatherRows(a, indices.to_vec()))
    }

    /// Averages consecutive blocks of `group` rows.
    pub fn mean_row_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if group == 0 || r % group != 0 {
            return Err(Error::Shape {
                op: "mean_row_groups",
                left: (r, c),
                right: (group, 0),
            });
        }
        let src = self.value(a);
        let mut out = Matrix::zeros(r / group, c);
        for g in 0..r / group {
            let orow = out.row_mut(g);
            for k in 0..group {
                for (o, x) in orow.iter_mut().zip(src.row(g * group + k)) {
                    *o += x;
                }
            }
            for o in orow.iter_mut() {
                *o /= group as f64;
            }
        }
        self.push(out, Op::MeanRowGroups(a, group))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::scalar(self.value(a).sum_squares());
        self.push(value, Op::SumSquares(a))
    }

    /// `mean((pred - target)^2)` as a `1 × 1` node.
    pub fn mse(&mut self, pred: Var, target: &Matrix) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Shape {
                op: "mse",
                left: p.shape(),
                right: target.shape(),
            });
        }
        if p.is_empty() {
            return Err(Error::invalid("mse over zero elements"));
        }
        let n = p.len() as f64;
        let total: f64 = p
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(Matrix::scalar(total / n), Op::MeanSquaredError(pred, target.clone()))
    }

    /// Multi-head scaled dot-product attention within each row group.
    ///
    /// Rows of `q`, `k`, `v` are partitioned by `groups`; attention runs
    /// among the rows of a group only. With a bias, logits of every group
    /// get `scale · weights` added (weights is `size × size`). Reductions
    /// over keys are order-invariant, so permuting rows within a group
    /// (and the bias consistently) permutes the output exactly.
    pub fn grouped_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        groups: &Groups,
        heads: usize,
        bias: Option<AttentionBias>,
        dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<Var> {
        let (rows, width) = self.shape(q);
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        if heads == 0 || width % heads != 0 {
            return Err(Error::invalid(alloc::format!(
                "width {width} not divisible into {heads} heads"
            )));
        }
        if groups.max_row() >= rows {
            return Err(Error::Shape {
                op: "attention",
                left: (rows, width),
                right: (groups.max_row() + 1, 0),
            });
        }
        let n = groups.group_size();
        if let Some(b) = &bias {
            if b.weights.shape() != (n, n) || self.shape(b.scale) != (1, 1) {
                return Err(Error::Shape {
                    op: "attention bias",
                    left: (n, n),
                    right: b.weights.shape(),
                });
            }
        }
        let dk = width / heads;
        let inv_sqrt = 1.0 / libm::sqrt(dk as f64);
        let alpha = bias.as_ref().map(|b| self.value(b.scale).get(0, 0));
        let qv = self.value(q);
        let kv = self.value(k);
        let vv = self.value(v);

        let (rate, mut rng) = match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                check_rate(rate)?;
                (rate, Some(rng))
            }
            Some((rate, _)) => {
                check_rate(rate)?;
                (0.0, None)
            }
            None => (0.0, None),
        };

        let mut out = Matrix::zeros(rows, width);
        let mut probs = Vec::with_capacity(groups.len() * heads);
        let mut masks = rng.as_ref().map(|_| Vec::with_capacity(groups.len() * heads));
        let mut buf = vec![0.0; n];
        let mut acc = vec![0.0; dk];
        for idx in groups.iter() {
            let order = canonical_order(idx, kv, vv);
            for h in 0..heads {
                let off = h * dk;
                let mut p = Matrix::zeros(n, n);
                for i in 0..n {
                    let qi = &qv.row(idx[i])[off..off + dk];
                    let row = p.row_mut(i);
                    for (j, slot) in row.iter_mut().enumerate() {
                        let kj = &kv.row(idx[j])[off..off + dk];
                        let mut s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt;
                        if let (Some(a), Some(b)) = (alpha, &bias) {
                            s += a * b.weights.get(i, j);
                        }
                        *slot = s;
                    }
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    for x in row.iter_mut() {
                        *x = libm::exp(*x - max);
                    }
                    let total = ordered_sum(row, order.as_deref(), &mut buf);
                    for x in row.iter_mut() {
                        *x /= total;
                    }
                }
                let applied = match rng.as_deref_mut() {
                    Some(r) => {
                        let m = dropout_mask(n, n, rate, r)?;
                        let pm = p.hadamard(&m)?;
                        if let Some(ms) = masks.as_mut() {
                            ms.push(m);
                        }
                        pm
                    }
                    None => p.clone(),
                };
                for i in 0..n {
                    let pi = applied.row(i);
                    match order.as_deref() {
                        Some(ord) => {
                            acc.fill(0.0);
                            for &j in ord {
                                let vj = &vv.row(idx[j])[off..off + dk];
                                for (a, x) in acc.iter_mut().zip(vj) {
                                    *a += pi[j] * x;
                                }
                            }
                            out.row_mut(idx[i])[off..off + dk].copy_from_slice(&acc);
                        }
                        None => {
                            for c in 0..dk {
                                for j in 0..n {
                                    buf[j] = pi[j] * vv.get(idx[j], off + c);
                                }
                                out.set(idx[i], off + c, order_invariant_sum(&mut buf));
                            }
                        }
                    }
                }
                probs.push(p);
            }
        }
        let ctx = AttentionCtx {
            q,
            k,
            v,
            groups: groups.clone(),
            heads,
            bias,
            probs,
            masks,
        };
        self.push(out, Op::Attention(ctx))
    }

    /// Fixed-graph propagation within each row group: `out_i = Σ_j w_ij v_j`
    /// with `w` row-normalized. Reductions over `j` are order-invariant.
    pub fn graph_propagate(&mut self, v: Var, groups: &Groups, weights: &Matrix) -> Result<Var> {
        let (rows, width) = self.shape(v);
        let n = groups.group_size();
        if weights.shape() != (n, n) || groups.max_row() >= rows {
            return Err(Error::Shape {
                op: "graph_propagate",
                left: (n, n),
                right: weights.shape(),
            });
        }
        let mut norm = weights.clone();
        let mut buf = vec![0.0; n];
        for i in 0..n {
            buf.copy_from_slice(norm.row(i));
            let total = order_invariant_sum(&mut buf);
            if total > 0.0 {
                for x in norm.row_mut(i) {
                    *x /= total;
                }
            }
        }
        let vv = self.value(v);
        let mut out = Matrix::zeros(rows, width);
        let mut acc = vec![0.0; width];
        for idx in groups.iter() {
            let order = canonical_order(idx, vv, vv);
            for i in 0..n {
                let wi = norm.row(i);
                match order.as_deref() {
                    Some(ord) => {
                        acc.fill(0.0);
                        for &j in ord {
                            for (a, x) in acc.iter_mut().zip(vv.row(idx[j])) {
                                *a += wi[j] * x;
                            }
                        }
                        out.row_mut(idx[i]).copy_from_slice(&acc);
                    }
                    None => {
                        for c in 0..width {
                            for j in 0..n {
                                buf[j] = wi[j] * vv.get(idx[j], c);
                            }
                            out.set(idx[i], c, order_invariant_sum(&mut buf));
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Propagate {
                v,
                groups: groups.clone(),
                weights: norm,
            },
        )
    }

    /// Propagates adjoints from the scalar `output` and writes
    /// `∂output/∂param` into every parameter's gradient. Parameters not on
    /// the path receive exact zeros. Consumes the tape.
    pub fn backward(&mut self, output: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("tape already consumed by backward".into()));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::Tape("output node is not on this tape".into()));
        }
        if self.shape(output) != (1, 1) {
            let (r, c) = self.shape(output);
            return Err(Error::Tape(alloc::format!(
                "backward needs a scalar output, got {r}x{c}"
            )));
        }
        self.consumed = true;
        store.zero_grads();

        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Matrix::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    store.get_mut(name)?.grad.add_assign(&g)?;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    matmul_nt_into(&g, bv, &mut da);
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    matmul_tn_into(av, &g, &mut db);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *row, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Sigmoid(a) => {
                    let da = g.zip_with(&node.value, "sigmoid", |gv, y| gv * y * (1.0 - y))?;
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let da = g.zip_with(self.value(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = self.value(*gamma).as_slice();
                    let (rows, cols) = xhat.shape();
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dgamma = Matrix::zeros(1, cols);
                    let mut dbeta = Matrix::zeros(1, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let gv = g.get(r, c);
                            let h = xhat.get(r, c);
                            dgamma.row_mut(0)[c] += gv * h;
                            dbeta.row_mut(0)[c] += gv;
                            let d = gv * gam[c];
                            mean_d += d;
                            mean_dx += d * h;
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for c in 0..cols {
                            let d = g.get(r, c) * gam[c];
                            dx.set(r, c, inv_std[r] * (d - mean_d - xhat.get(r, c) * mean_dx));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::Mask(a, mask) => accumulate(&mut grads, *a, g.hadamard(mask)?),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        accumulate(&mut grads, p, g.slice_cols(off, w));
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Matrix::zeros(r, c);
                    for row in 0..r {
                        da.row_mut(row)[*start..*start + g.cols()].copy_from_slice(g.row(row));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Matrix::zeros(r, c);
                    for (k, &src) in idx.iter().enumerate() {
                        for (d, x) in da.row_mut(src).iter_mut().zip(g.row(k)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::MeanRowGroups(a, group) => {
                    let (r, c) = self.shape(*a);
                    let mut da = Matrix::zeros(r, c);
                    let inv = 1.0 / *group as f64;
                    for row in 0..r {
                        for (d, x) in da.row_mut(row).iter_mut().zip(g.row(row / group)) {
                            *d = x * inv;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.get(0, 0);
                    accumulate(&mut grads, *a, self.value(*a).scale(s));
                }
                Op::MeanSquaredError(pred, target) => {
                    let p = self.value(*pred);
                    let s = 2.0 * g.get(0, 0) / p.len() as f64;
                    let dp = p.zip_with(target, "mse", |a, b| s * (a - b))?;
                    accumulate(&mut grads, *pred, dp);
                }
                Op::Attention(ctx) => {
                    let (dq, dk, dv, dalpha) = self.attention_backward(ctx, &g);
                    accumulate(&mut grads, ctx.q, dq);
                    accumulate(&mut grads, ctx.k, dk);
                    accumulate(&mut grads, ctx.v, dv);
                    if let (Some(b), Some(da)) = (&ctx.bias, dalpha) {
                        accumulate(&mut grads, b.scale, Matrix::scalar(da));
                    }
                }
                Op::Propagate { v, groups, weights } => {
                    let (r, c) = self.shape(*v);
                    let mut dv = Matrix::zeros(r, c);
                    let n = groups.group_size();
                    for idx in groups.iter() {
                        for i in 0..n {
                            for j in 0..n {
                                let w = weights.get(i, j);
                                if w == 0.0 {
                                    continue;
                                }
                                for col in 0..c {
                                    let cur = dv.get(idx[j], col);
                                    dv.set(idx[j], col, cur + w * g.get(idx[i], col));
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *v, dv);
                }
            }
        }
        Ok(())
    }

    fn attention_backward(&self, ctx: &AttentionCtx, g: &Matrix) -> (Matrix, Matrix, Matrix, Option<f64>) {
        let qv = self.value(ctx.q);
        let kv = self.value(ctx.k);
        let vv = self.value(ctx.v);
        let (rows, width) = qv.shape();
        let dk = width / ctx.heads;
        let inv_sqrt = 1.0 / libm::sqrt(dk as f64);
        let n = ctx.groups.group_size();
        let mut dq = Matrix::zeros(rows, width);
        let mut dkm = Matrix::zeros(rows, width);
        let mut dv = Matrix::zeros(rows, width);
        let mut dalpha = ctx.bias.as_ref().map(|_| 0.0);

        let mut dp = Matrix::zeros(n, n);
        let mut dqi = vec![0.0; dk];
        for (gi, idx) in ctx.groups.iter().enumerate() {
            for h in 0..ctx.heads {
                let slot = gi * ctx.heads + h;
                let p = &ctx.probs[slot];
                let mask = ctx.masks.as_ref().map(|m| &m[slot]);
                let off = h * dk;
                // dP' = dO · Vᵀ, dV += P'ᵀ · dO
                for i in 0..n {
                    let go = &g.row(idx[i])[off..off + dk];
                    for j in 0..n {
                        let vj = &vv.row(idx[j])[off..off + dk];
                        let mut d: f64 = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                        let pij = match mask {
                            Some(m) => {
                                d *= m.get(i, j);
                                p.get(i, j) * m.get(i, j)
                            }
                            None => p.get(i, j),
                        };
                        dp.set(i, j, d);
                        if pij != 0.0 {
                            let dvr = &mut dv.row_mut(idx[j])[off..off + dk];
                            for (x, y) in dvr.iter_mut().zip(go) {
                                *x += pij * y;
                            }
                        }
                    }
                }
                // dS = P ∘ (dP − rowsum(dP ∘ P))
                for i in 0..n {
                    let (pi, dpi) = (p.row(i), dp.row(i));
                    let dot: f64 = pi.iter().zip(dpi).map(|(a, b)| a * b).sum();
                    let qi = &qv.row(idx[i])[off..off + dk];
                    dqi.fill(0.0);
                    for j in 0..n {
                        let ds = pi[j] * (dpi[j] - dot);
                        if let (Some(acc), Some(b)) = (dalpha.as_mut(), &ctx.bias) {
                            *acc += ds * b.weights.get(i, j);
                        }
                        let s = ds * inv_sqrt;
                        if s == 0.0 {
                            continue;
                        }
                        let kj = &kv.row(idx[j])[off..off + dk];
                        for (x, y) in dqi.iter_mut().zip(kj) {
                            *x += s * y;
                        }
                        let dkj = &mut dkm.row_mut(idx[j])[off..off + dk];
                        for (x, y) in dkj.iter_mut().zip(qi) {
                            *x += s * y;
                        }
                    }
                    for (x, y) in dq.row_mut(idx[i])[off..off + dk].iter_mut().zip(&dqi) {
                        *x += y;
                    }
                }
            }
        }
        (dq, dkm, dv, dalpha)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Order of the rows in `idx` sorted by their contents in `a`, then `b`.
/// Summing over keys in this order gives results that do not depend on
/// how the rows were numbered. `None` when two rows tie.
fn canonical_order(idx: &[usize], a: &Matrix, b: &Matrix) -> Option<Vec<usize>> {
    let cmp = |x: &usize, y: &usize| {
        lex_cmp(a.row(idx[*x]), a.row(idx[*y])).then_with(|| lex_cmp(b.row(idx[*x]), b.row(idx[*y])))
    };
    let mut ord: Vec<usize> = (0..idx.len()).collect();
    ord.sort_unstable_by(cmp);
    if ord.windows(2).any(|w| cmp(&w[0], &w[1]) == Ordering::Equal) {
        return None;
    }
    Some(ord)
}

fn ordered_sum(values: &[f64], order: Option<&[usize]>, scratch: &mut [f64]) -> f64 {
    match order {
        Some(ord) => ord.iter().map(|&j| values[j]).sum(),
        None => {
            scratch.copy_from_slice(values);
            order_invariant_sum(scratch)
        }
    }
}

/// Runs [`Tape::backward`].
pub fn backward(tape: &mut Tape, output: Var, store: &mut ParamStore) -> Result<()> {
    tape.backward(output, store)
}

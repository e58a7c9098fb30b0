use alloc::string::String;
use alloc::vec::Vec;
use rand::RngCore;

use super::{names, GriffinModel, RELATIONS};
use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::numerics::{AttentionBias, Groups, Matrix, Mode, Tape, Var, LAYER_NORM_EPS};
use crate::relations::{RelationGraph, RelationKind};

/// The two relation graphs, in batch stock order.
#[derive(Debug, Clone, Copy)]
pub struct Graphs<'a> {
    pub industry: &'a RelationGraph,
    pub institution: &'a RelationGraph,
}

impl<'a> Graphs<'a> {
    pub fn new(industry: &'a RelationGraph, institution: &'a RelationGraph) -> Self {
        Graphs { industry, institution }
    }

    pub fn get(&self, kind: RelationKind) -> &'a RelationGraph {
        match kind {
            RelationKind::Industry => self.industry,
            RelationKind::Institution => self.institution,
        }
    }
}

/// Tape handles produced by a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TapeForward {
    /// `N × 1` predictions.
    pub predictions: Var,
    /// Gate activations per relation (industry, institution), one row per
    /// (stock, step) in stock-major order. `None` when gating is disabled.
    pub gates: Option<[Var; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub predictions: Vec<f64>,
    /// Per (stock, step) mean gate activation, `N × T`, industry relation.
    pub gate_ind: Option<Matrix>,
    /// Same for the institution relation.
    pub gate_inst: Option<Matrix>,
}

/// Sinusoidal encoding: `sin` on even columns, `cos` on odd ones.
pub fn positional_encoding(steps: usize, d_model: usize) -> Result<Matrix> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::invalid(alloc::format!(
            "positional encoding needs an even width, got {d_model}"
        )));
    }
    if steps == 0 {
        return Err(Error::invalid("positional encoding needs at least one step"));
    }
    let mut pe = Matrix::zeros(steps, d_model);
    for pos in 0..steps {
        for i in 0..d_model / 2 {
            let freq = libm::pow(10000.0, (2 * i) as f64 / d_model as f64);
            let angle = pos as f64 / freq;
            pe.set(pos, 2 * i, libm::sin(angle));
            pe.set(pos, 2 * i + 1, libm::cos(angle));
        }
    }
    Ok(pe)
}

/// Company and market linear maps, concatenation, projection to `d_model`,
/// plus the positional encoding of each step. Output is `N·T × d_model`.
pub fn embed_features(tape: &mut Tape, batch: &WindowBatch, model: &GriffinModel) -> Result<Var> {
    let cfg = &model.config;
    if batch.d_company != cfg.d_company || batch.d_market != cfg.d_market {
        return Err(Error::Shape {
            op: "embed_features",
            left: (cfg.d_company, cfg.d_market),
            right: (batch.d_company, batch.d_market),
        });
    }
    let n = batch.n_stocks();
    let steps = batch.steps;
    let company = tape.constant(batch.features.slice_cols(0, cfg.d_company))?;
    let market = tape.constant(batch.features.slice_cols(cfg.d_company, cfg.d_market))?;
    let w_c = tape.param(&model.params, names::COMPANY)?;
    let w_m = tape.param(&model.params, names::MARKET)?;
    let xc = tape.matmul(company, w_c)?;
    let xm = tape.matmul(market, w_m)?;
    let cat = tape.concat_cols(&[xc, xm])?;
    let w_in = tape.param(&model.params, names::INPUT_PROJ)?;
    let x = tape.matmul(cat, w_in)?;

    let pe = positional_encoding(steps, cfg.d_model)?;
    let mut tiled = Vec::with_capacity(n * steps * cfg.d_model);
    for _ in 0..n {
        tiled.extend_from_slice(pe.as_slice());
    }
    let pe = tape.constant(Matrix::from_vec_unchecked(n * steps, cfg.d_model, tiled))?;
    tape.add(x, pe)
}

fn dropout_arg(mode: Mode, rate: f64, rng: &mut dyn RngCore) -> Option<(f64, &mut dyn RngCore)> {
    match mode {
        Mode::Train if rate > 0.0 => Some((rate, rng)),
        _ => None,
    }
}

/// Relation module for every step of a window at once: rows of `x` are
/// `N·T` stock-major embeddings; attention runs across stocks within each
/// step. Returns `N·T × d_model`.
pub fn relation_block(
    tape: &mut Tape,
    x: Var,
    n_stocks: usize,
    steps: usize,
    graph: &RelationGraph,
    model: &GriffinModel,
    kind: RelationKind,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let groups = Groups::strided(steps, n_stocks)?;
    relation_over_groups(tape, x, &groups, graph, model, kind, mode, rng)
}

fn relation_over_groups(
    tape: &mut Tape,
    x: Var,
    groups: &Groups,
    graph: &RelationGraph,
    model: &GriffinModel,
    kind: RelationKind,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let cfg = &model.config;
    let p = &model.params;
    if graph.len() != groups.group_size() {
        return Err(Error::Shape {
            op: "relation attention",
            left: (groups.group_size(), groups.group_size()),
            right: graph.weights().shape(),
        });
    }
    let w_v = tape.param(p, &names::relation(kind, "w_v"))?;
    let w_o = tape.param(p, &names::relation(kind, "w_o"))?;
    let v = tape.matmul(x, w_v)?;
    let mixed = if cfg.use_cross_stock_attention {
        let w_q = tape.param(p, &names::relation(kind, "w_q"))?;
        let w_k = tape.param(p, &names::relation(kind, "w_k"))?;
        let q = tape.matmul(x, w_q)?;
        let k = tape.matmul(x, w_k)?;
        let bias = if cfg.use_relation_bias {
            Some(AttentionBias {
                scale: tape.param(p, &names::relation(kind, "alpha"))?,
                weights: graph.weights().clone(),
            })
        } else {
            None
        };
        tape.grouped_attention(q, k, v, groups, cfg.n_heads, bias, dropout_arg(mode, cfg.dropout, rng))?
    } else {
        let weights = if cfg.use_relation_bias {
            graph.weights().clone()
        } else {
            Matrix::identity(graph.len())
        };
        tape.graph_propagate(v, groups, &weights)?
    };
    tape.matmul(mixed, w_o)
}

/// Relation-biased multi-head attention across the stocks of one step.
/// `x_t` is `N × d_model` in `tickers` order.
pub fn relation_attention(
    tape: &mut Tape,
    x_t: Var,
    tickers: &[String],
    graph: &RelationGraph,
    model: &GriffinModel,
    kind: RelationKind,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    graph.check_order(tickers)?;
    let n = tape.value(x_t).rows();
    if n != tickers.len() {
        return Err(Error::invalid("x_t rows do not match the ticker list"));
    }
    let groups = Groups::contiguous(1, n)?;
    relation_over_groups(tape, x_t, &groups, graph, model, kind, mode, rng)
}

/// Gated fusion of the two relation outputs with a residual projection.
/// Gates are computed from the pre-attention embedding `x`.
pub fn gated_fusion(
    tape: &mut Tape,
    x: Var,
    x_ind: Var,
    x_inst: Var,
    model: &GriffinModel,
) -> Result<(Var, Option<[Var; 2]>)> {
    let p = &model.params;
    let (fused_sum, gates) = if model.config.use_gating {
        let mut gated = [x_ind, x_inst];
        let mut gates = [x, x];
        for (slot, kind) in RELATIONS.into_iter().enumerate() {
            let w = tape.param(p, &names::gate_weight(kind))?;
            let b = tape.param(p, &names::gate_bias(kind))?;
            let lin = tape.matmul(x, w)?;
            let lin = tape.add_row(lin, b)?;
            let g = tape.sigmoid(lin)?;
            gates[slot] = g;
            gated[slot] = tape.mul(g, gated[slot])?;
        }
        (tape.add(gated[0], gated[1])?, Some(gates))
    } else {
        (tape.add(x_ind, x_inst)?, None)
    };
    let fused = tape.scale(fused_sum, 0.5)?;
    let w_proj = tape.param(p, names::FUSION_PROJ)?;
    let projected = tape.matmul(fused, w_proj)?;
    Ok((tape.add(projected, x)?, gates))
}

/// Pre-norm Transformer layer applied over time, independently per stock.
/// Rows of `x` are `N·T` stock-major.
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    n_stocks: usize,
    steps: usize,
    layer: usize,
    model: &GriffinModel,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let cfg = &model.config;
    let p = &model.params;
    let pv = |tape: &mut Tape, item: &str| tape.param(p, &names::encoder(layer, item));
    let groups = Groups::contiguous(n_stocks, steps)?;

    let g1 = pv(tape, "ln1.gamma")?;
    let b1 = pv(tape, "ln1.beta")?;
    let h = tape.layer_norm(x, g1, b1, LAYER_NORM_EPS)?;
    let w_q = pv(tape, "attn.w_q")?;
    let w_k = pv(tape, "attn.w_k")?;
    let w_v = pv(tape, "attn.w_v")?;
    let w_o = pv(tape, "attn.w_o")?;
    let q = tape.matmul(h, w_q)?;
    let k = tape.matmul(h, w_k)?;
    let v = tape.matmul(h, w_v)?;
    let att = tape.grouped_attention(q, k, v, &groups, cfg.n_heads, None, None)?;
    let mut att = tape.matmul(att, w_o)?;
    if mode == Mode::Train {
        att = tape.dropout(att, cfg.dropout, &mut *rng)?;
    }
    let x = tape.add(x, att)?;

    let g2 = pv(tape, "ln2.gamma")?;
    let b2 = pv(tape, "ln2.beta")?;
    let h = tape.layer_norm(x, g2, b2, LAYER_NORM_EPS)?;
    let w1 = pv(tape, "ffn.w1")?;
    let c1 = pv(tape, "ffn.b1")?;
    let w2 = pv(tape, "ffn.w2")?;
    let c2 = pv(tape, "ffn.b2")?;
    let f = tape.matmul(h, w1)?;
    let f = tape.add_row(f, c1)?;
    let f = tape.relu(f)?;
    let f = tape.matmul(f, w2)?;
    let mut f = tape.add_row(f, c2)?;
    if mode == Mode::Train {
        f = tape.dropout(f, cfg.dropout, rng)?;
    }
    tape.add(x, f)
}

/// Mean over steps, then `ReLU(x·W_hidden + b_hidden)·w_out + b_out`.
/// Returns `N × 1`.
pub fn pool_and_predict(tape: &mut Tape, h: Var, steps: usize, model: &GriffinModel) -> Result<Var> {
    let p = &model.params;
    let pooled = tape.mean_row_groups(h, steps)?;
    let w_h = tape.param(p, names::HEAD_HIDDEN_W)?;
    let b_h = tape.param(p, names::HEAD_HIDDEN_B)?;
    let w_o = tape.param(p, names::HEAD_OUT_W)?;
    let b_o = tape.param(p, names::HEAD_OUT_B)?;
    let hidden = tape.matmul(pooled, w_h)?;
    let hidden = tape.add_row(hidden, b_h)?;
    let hidden = tape.relu(hidden)?;
    let out = tape.matmul(hidden, w_o)?;
    tape.add_row(out, b_o)
}

/// Full pipeline recorded on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    batch: &WindowBatch,
    graphs: Graphs<'_>,
    model: &GriffinModel,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<TapeForward> {
    for kind in RELATIONS {
        graphs.get(kind).check_order(&batch.tickers)?;
    }
    let n = batch.n_stocks();
    let steps = batch.steps;
    let x = embed_features(tape, batch, model)?;
    let x_ind = relation_block(
        tape,
        x,
        n,
        steps,
        graphs.industry,
        model,
        RelationKind::Industry,
        mode,
        &mut *rng,
    )?;
    let x_inst = relation_block(
        tape,
        x,
        n,
        steps,
        graphs.institution,
        model,
        RelationKind::Institution,
        mode,
        &mut *rng,
    )?;
    let (mut h, gates) = gated_fusion(tape, x, x_ind, x_inst, model)?;
    for layer in 0..model.config.encoder_layers() {
        h = encoder_layer(tape, h, n, steps, layer, model, mode, &mut *rng)?;
    }
    let predictions = pool_and_predict(tape, h, steps, model)?;
    Ok(TapeForward { predictions, gates })
}

/// Runs the model on one window and collects predictions and gate means.
pub fn forward(
    batch: &WindowBatch,
    graphs: Graphs<'_>,
    model: &GriffinModel,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let out = forward_on_tape(&mut tape, batch, graphs, model, mode, rng)?;
    let predictions = tape.value(out.predictions).as_slice().to_vec();
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("model predictions".into()));
    }
    let gate_means = |v: Var| -> Matrix {
        let g = tape.value(v);
        let d = g.cols() as f64;
        let data = (0..g.rows()).map(|r| g.row(r).iter().sum::<f64>() / d).collect();
        Matrix::from_vec_unchecked(batch.n_stocks(), batch.steps, data)
    };
    let (gate_ind, gate_inst) = match out.gates {
        Some([gi, gs]) => (Some(gate_means(gi)), Some(gate_means(gs))),
        None => (None, None),
    };
    Ok(ForwardOutput {
        predictions,
        gate_ind,
        gate_inst,
    })
}

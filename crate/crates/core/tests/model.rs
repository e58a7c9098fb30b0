mod common;

use common::oracle::{self, M};
use griffin_core::data::WindowBatch;
use griffin_core::model::{
    embed_features, encoder_layer, forward, gated_fusion, names, pool_and_predict, positional_encoding,
    relation_attention, Graphs, GriffinModel, ModelConfig,
};
use griffin_core::numerics::{AttentionBias, Groups, Matrix, Mode, Tape, LAYER_NORM_EPS};
use griffin_core::relations::{RelationGraph, RelationKind};
use griffin_core::rng::{stream, Stream};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn randomize(model: &mut GriffinModel, seed: u64) {
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for (k, name) in names.iter().enumerate() {
        let v = model.params.value(name).unwrap();
        let m = random_matrix(v.rows(), v.cols(), seed * 1000 + k as u64);
        model.params.set_value(name, m).unwrap();
    }
}

fn set(model: &mut GriffinModel, name: &str, value: Matrix) {
    model.params.set_value(name, value).unwrap();
}

fn value(model: &GriffinModel, name: &str) -> M {
    oracle::from(model.params.value(name).unwrap())
}

fn rng() -> rand_chacha::ChaCha8Rng {
    stream(0, Stream::Dropout)
}

fn tickers(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("T{i}")).collect()
}

fn graph(weights: Matrix, kind: RelationKind) -> RelationGraph {
    let n = weights.rows();
    RelationGraph::new(tickers(n), weights, kind).unwrap()
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding(4, 6).unwrap();
    for c in 0..6 {
        assert_eq!(pe.get(0, c), if c % 2 == 0 { 0.0 } else { 1.0 });
    }
    for d in [2, 8, 256] {
        assert!((positional_encoding(2, d).unwrap().get(1, 0) - 0.841471).abs() < 1e-6);
    }
    assert!(pe.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(positional_encoding(3, 5).is_err());
}

fn zero_batch(n: usize, steps: usize, dc: usize, dm: usize) -> WindowBatch {
    WindowBatch {
        dates: (0..steps).map(|t| format!("2020-01-{:02}", t + 1)).collect(),
        tickers: tickers(n),
        steps,
        d_company: dc,
        d_market: dm,
        features: Matrix::zeros(n * steps, dc + dm),
        targets: vec![0.0; n],
        returns: vec![0.0; n],
    }
}

#[test]
fn embedding_of_zeros_is_the_positional_encoding() {
    let cfg = common::tiny_config();
    let mut model = GriffinModel::new(cfg.clone(), 1).unwrap();
    for name in [names::COMPANY, names::MARKET, names::INPUT_PROJ] {
        let v = model.params.value(name).unwrap();
        let z = Matrix::zeros(v.rows(), v.cols());
        set(&mut model, name, z);
    }
    let batch = zero_batch(3, 4, cfg.d_company, cfg.d_market);
    let mut tape = Tape::new();
    let x = embed_features(&mut tape, &batch, &model).unwrap();
    let pe = positional_encoding(4, cfg.d_model).unwrap();
    let out = tape.value(x);
    for i in 0..3 {
        for t in 0..4 {
            assert_eq!(out.row(i * 4 + t), pe.row(t));
        }
    }
}

#[test]
fn identical_stocks_embed_identically() {
    let (mut batch, _, _) = common::tiny_problem(3, 4, 2);
    let width = batch.features.cols();
    let mut data = batch.features.as_slice().to_vec();
    for t in 0..4 {
        let src: Vec<f64> = data[t * width..(t + 1) * width].to_vec();
        data[(4 + t) * width..(5 + t) * width].copy_from_slice(&src);
    }
    batch.features = Matrix::new(12, width, data).unwrap();
    let model = GriffinModel::new(common::tiny_config(), 4).unwrap();
    let mut tape = Tape::new();
    let x = embed_features(&mut tape, &batch, &model).unwrap();
    let out = tape.value(x);
    for t in 0..4 {
        assert_eq!(out.row(t), out.row(4 + t));
    }
}

fn relation_out(model: &GriffinModel, x: &Matrix, g: &RelationGraph) -> M {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let out = relation_attention(
        &mut tape,
        xv,
        g.tickers(),
        g,
        model,
        RelationKind::Industry,
        Mode::Eval,
        &mut rng(),
    )
    .unwrap();
    oracle::from(tape.value(out))
}

#[test]
fn zero_alpha_is_plain_attention() {
    let cfg = common::tiny_config();
    let mut model = GriffinModel::new(cfg.clone(), 7).unwrap();
    let alpha = names::relation(RelationKind::Industry, "alpha");
    set(&mut model, &alpha, Matrix::scalar(0.0));
    let (_, ind, _) = common::tiny_problem(5, 1, 3);
    let g = graph(ind.weights().clone(), RelationKind::Industry);
    let x = random_matrix(5, cfg.d_model, 11);
    let got = relation_out(&model, &x, &g);

    let p = |item: &str| value(&model, &names::relation(RelationKind::Industry, item));
    let heads = oracle::mha(&oracle::from(&x), &p("w_q"), &p("w_k"), &p("w_v"), cfg.n_heads, None);
    let expected = oracle::mm(&heads, &p("w_o"));
    assert!(oracle::max_abs_diff(&got, &expected) <= 1e-12);

    // The structural ablation with the same remaining weights agrees too.
    let ablated_cfg = ModelConfig {
        use_relation_bias: false,
        ..cfg
    };
    let mut params = model.params.clone();
    let mut kept = griffin_core::numerics::ParamStore::new();
    for (name, prm) in params.iter_mut() {
        if !name.ends_with("alpha") {
            kept.insert(name, prm.value.clone(), prm.decay).unwrap();
        }
    }
    let ablated = GriffinModel::from_params(ablated_cfg, kept).unwrap();
    let got_ablated = relation_out(&ablated, &x, &g);
    assert!(oracle::max_abs_diff(&got, &got_ablated) <= 1e-12);
}

#[test]
fn biased_attention_matches_oracle() {
    let cfg = common::tiny_config();
    let mut model = GriffinModel::new(cfg.clone(), 8).unwrap();
    let alpha = names::relation(RelationKind::Industry, "alpha");
    set(&mut model, &alpha, Matrix::scalar(0.7));
    let (_, _, inst) = common::tiny_problem(6, 1, 5);
    let g = graph(inst.weights().clone(), RelationKind::Industry);
    let x = random_matrix(6, cfg.d_model, 12);
    let got = relation_out(&model, &x, &g);
    let p = |item: &str| value(&model, &names::relation(RelationKind::Industry, item));
    let r = oracle::from(g.weights());
    let heads = oracle::mha(
        &oracle::from(&x),
        &p("w_q"),
        &p("w_k"),
        &p("w_v"),
        cfg.n_heads,
        Some((0.7, &r)),
    );
    assert!(oracle::max_abs_diff(&got, &oracle::mm(&heads, &p("w_o"))) <= 1e-12);
}

#[test]
fn single_stock_attends_to_itself() {
    let cfg = common::tiny_config();
    let model = GriffinModel::new(cfg.clone(), 9).unwrap();
    let g = graph(Matrix::identity(1), RelationKind::Industry);
    let x = random_matrix(1, cfg.d_model, 13);
    let got = relation_out(&model, &x, &g);
    let p = |item: &str| value(&model, &names::relation(RelationKind::Industry, item));
    let expected = oracle::mm(&oracle::mm(&oracle::from(&x), &p("w_v")), &p("w_o"));
    assert!(oracle::max_abs_diff(&got, &expected) <= 1e-12);
}

#[test]
fn saturating_bias_selects_the_neighbour() {
    let cfg = common::tiny_config();
    let mut model = GriffinModel::new(cfg.clone(), 10).unwrap();
    set(
        &mut model,
        &names::relation(RelationKind::Industry, "alpha"),
        Matrix::scalar(50.0),
    );
    let n = 4;
    let mut w = Matrix::zeros(n, n).into_vec();
    w[2] = 1.0; // row 0 one-hot at column 2
    w[2 * n] = 1.0;
    w[n + 1] = 1.0;
    w[3 * n + 3] = 1.0;
    let weights = Matrix::new(n, n, w).unwrap();
    let x = random_matrix(n, cfg.d_model, 14);

    let mut tape = Tape::new();
    let q = tape.constant(x.clone()).unwrap();
    let scale = tape.constant(Matrix::scalar(50.0)).unwrap();
    let att = tape
        .grouped_attention(
            q,
            q,
            q,
            &Groups::contiguous(1, n).unwrap(),
            cfg.n_heads,
            Some(AttentionBias {
                scale,
                weights: weights.clone(),
            }),
            None,
        )
        .unwrap();
    for p in tape.attention_probs(att).unwrap() {
        assert!(p.get(0, 2) >= 1.0 - 1e-6);
    }

    let g = graph(weights, RelationKind::Industry);
    let got = relation_out(&model, &x, &g);
    let p = |item: &str| value(&model, &names::relation(RelationKind::Industry, item));
    let mixed_value = oracle::mm(&oracle::mm(&oracle::from(&x), &p("w_v")), &p("w_o"));
    for c in 0..cfg.d_model {
        assert!((got[0][c] - mixed_value[2][c]).abs() < 1e-5);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let x = random_matrix(12, 8, 15);
    let r = random_matrix(4, 4, 16).map(|v| v.abs());
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let scale = tape.constant(Matrix::scalar(1.3)).unwrap();
    for (groups, bias) in [
        (
            Groups::strided(3, 4).unwrap(),
            Some(AttentionBias { scale, weights: r }),
        ),
        (Groups::contiguous(4, 3).unwrap(), None),
    ] {
        let att = tape.grouped_attention(xv, xv, xv, &groups, 2, bias, None).unwrap();
        for p in tape.attention_probs(att).unwrap() {
            for i in 0..p.rows() {
                assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(p.row(i).iter().all(|v| *v > 0.0 && *v <= 1.0));
            }
        }
    }
}

#[test]
fn neutral_gates_average_the_relations() {
    let cfg = common::tiny_config();
    let model = GriffinModel::new(cfg.clone(), 11).unwrap();
    let (x, xi, xs) = (random_matrix(6, 8, 1), random_matrix(6, 8, 2), random_matrix(6, 8, 3));
    let mut tape = Tape::new();
    let (a, b, c) = (
        tape.constant(x.clone()).unwrap(),
        tape.constant(xi.clone()).unwrap(),
        tape.constant(xs.clone()).unwrap(),
    );
    let (out, gates) = gated_fusion(&mut tape, a, b, c, &model).unwrap();
    for g in gates.unwrap() {
        assert!(tape.value(g).as_slice().iter().all(|v| *v == 0.5));
    }
    let quarter: M = oracle::add(&oracle::from(&xi), &oracle::from(&xs))
        .iter()
        .map(|r| r.iter().map(|v| v / 4.0).collect())
        .collect();
    let expected = oracle::add(
        &oracle::mm(&quarter, &value(&model, names::FUSION_PROJ)),
        &oracle::from(&x),
    );
    assert!(oracle::max_abs_diff(&oracle::from(tape.value(out)), &expected) <= 1e-14);
}

#[test]
fn saturated_gates_with_identity_projection_pass_the_relation_through() {
    let cfg = common::tiny_config();
    let mut model = GriffinModel::new(cfg.clone(), 12).unwrap();
    set(&mut model, names::FUSION_PROJ, Matrix::identity(8));
    for kind in [RelationKind::Industry, RelationKind::Institution] {
        set(&mut model, &names::gate_bias(kind), Matrix::filled(1, 8, 40.0));
    }
    let z = random_matrix(5, 8, 4);
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::zeros(5, 8)).unwrap();
    let zv = tape.constant(z.clone()).unwrap();
    let (out, gates) = gated_fusion(&mut tape, x, zv, zv, &model).unwrap();
    assert_eq!(tape.value(out), &z);
    for g in gates.unwrap() {
        assert!(tape.value(g).as_slice().iter().all(|v| *v > 0.0 && *v <= 1.0));
    }
}

fn encoder_out(model: &GriffinModel, x: &Matrix, n: usize, steps: usize) -> Matrix {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let out = encoder_layer(&mut tape, xv, n, steps, 0, model, Mode::Eval, &mut rng()).unwrap();
    tape.value(out).clone()
}

#[test]
fn zeroed_output_maps_make_the_encoder_the_identity() {
    let cfg = common::tiny_config();
    let mut model = GriffinModel::new(cfg.clone(), 13).unwrap();
    randomize(&mut model, 3);
    set(&mut model, &names::encoder(0, "attn.w_o"), Matrix::zeros(8, 8));
    set(
        &mut model,
        &names::encoder(0, "ffn.w2"),
        Matrix::zeros(cfg.ffn_width(), 8),
    );
    set(&mut model, &names::encoder(0, "ffn.b2"), Matrix::zeros(1, 8));
    let x = random_matrix(12, 8, 5);
    assert_eq!(encoder_out(&model, &x, 3, 4), x);
}

#[test]
fn encoder_matches_straight_line_oracle() {
    let cfg = common::tiny_config();
    let mut model = GriffinModel::new(cfg.clone(), 14).unwrap();
    randomize(&mut model, 4);
    let x = random_matrix(3, 8, 6);
    let got = oracle::from(&encoder_out(&model, &x, 1, 3));

    let e = |item: &str| value(&model, &names::encoder(0, item));
    let row = |item: &str| e(item)[0].clone();
    let xs = oracle::from(&x);
    let h = oracle::layer_norm(&xs, &row("ln1.gamma"), &row("ln1.beta"), LAYER_NORM_EPS);
    let att = oracle::mha(&h, &e("attn.w_q"), &e("attn.w_k"), &e("attn.w_v"), cfg.n_heads, None);
    let x1 = oracle::add(&xs, &oracle::mm(&att, &e("attn.w_o")));
    let h2 = oracle::layer_norm(&x1, &row("ln2.gamma"), &row("ln2.beta"), LAYER_NORM_EPS);
    let f = oracle::relu(&oracle::add_row(&oracle::mm(&h2, &e("ffn.w1")), &row("ffn.b1")));
    let f = oracle::add_row(&oracle::mm(&f, &e("ffn.w2")), &row("ffn.b2"));
    let expected = oracle::add(&x1, &f);
    assert!(oracle::max_abs_diff(&got, &expected) <= 1e-10);
}

fn head(model: &GriffinModel, h: &Matrix, steps: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone()).unwrap();
    let out = pool_and_predict(&mut tape, hv, steps, model).unwrap();
    tape.value(out).as_slice().to_vec()
}

#[test]
fn head_pools_over_time() {
    let cfg = common::tiny_config();
    let mut model = GriffinModel::new(cfg.clone(), 15).unwrap();
    randomize(&mut model, 5);
    let h = random_matrix(4, 8, 7);

    let hidden = oracle::relu(&oracle::add_row(
        &oracle::mm(&oracle::from(&h), &value(&model, names::HEAD_HIDDEN_W)),
        &value(&model, names::HEAD_HIDDEN_B)[0],
    ));
    let expected = oracle::add_row(
        &oracle::mm(&hidden, &value(&model, names::HEAD_OUT_W)),
        &value(&model, names::HEAD_OUT_B)[0],
    );
    let got = head(&model, &h, 1);
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e[0]).abs() <= 1e-12);
    }

    let doubled = h.select_rows(&[0, 0, 1, 1, 2, 2, 3, 3]);
    let twice = head(&model, &doubled, 2);
    for (a, b) in got.iter().zip(&twice) {
        assert!((a - b).abs() <= 1e-14);
    }

    set(&mut model, names::HEAD_HIDDEN_W, Matrix::zeros(8, 8));
    let b_h = value(&model, names::HEAD_HIDDEN_B)[0].clone();
    let w_o = value(&model, names::HEAD_OUT_W);
    let constant: f64 =
        b_h.iter().zip(&w_o).map(|(b, w)| b.max(0.0) * w[0]).sum::<f64>() + value(&model, names::HEAD_OUT_B)[0][0];
    for p in head(&model, &h, 2) {
        assert!((p - constant).abs() <= 1e-12);
    }
}

#[test]
fn eval_forward_is_deterministic_and_bounded() {
    for seed in 0..100 {
        let (batch, ind, inst) = common::tiny_problem(4, 3, seed);
        let mut model = GriffinModel::new(common::tiny_config(), seed).unwrap();
        randomize(&mut model, seed);
        let graphs = Graphs::new(&ind, &inst);
        let a = forward(&batch, graphs, &model, Mode::Eval, &mut rng()).unwrap();
        let b = forward(&batch, graphs, &model, Mode::Eval, &mut stream(seed, Stream::Dropout)).unwrap();
        assert_eq!(a, b);
        assert!(a.predictions.iter().all(|p| p.is_finite()));
        for g in [a.gate_ind.unwrap(), a.gate_inst.unwrap()] {
            assert_eq!(g.shape(), (4, 3));
            assert!(g.as_slice().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}

#[test]
fn minimal_ablation_still_predicts_every_stock() {
    let cfg = ModelConfig {
        use_cross_stock_attention: false,
        use_temporal_encoder: false,
        ..common::tiny_config()
    };
    let (batch, ind, inst) = common::tiny_problem(5, 3, 1);
    let model = GriffinModel::new(cfg, 1).unwrap();
    let out = forward(&batch, Graphs::new(&ind, &inst), &model, Mode::Eval, &mut rng()).unwrap();
    assert_eq!(out.predictions.len(), 5);
}

#[test]
fn severed_relations_ignore_the_graphs() {
    let cfg = ModelConfig {
        use_gating: false,
        ..common::tiny_config()
    };
    let (batch, ind, inst) = common::tiny_problem(5, 3, 2);
    let mut model = GriffinModel::new(cfg, 2).unwrap();
    randomize(&mut model, 6);
    for kind in [RelationKind::Industry, RelationKind::Institution] {
        set(&mut model, &names::relation(kind, "alpha"), Matrix::scalar(0.0));
    }
    let before = forward(&batch, Graphs::new(&ind, &inst), &model, Mode::Eval, &mut rng()).unwrap();
    let names = ind.tickers().to_vec();
    let other_ind = RelationGraph::new(names.clone(), Matrix::identity(5), RelationKind::Industry).unwrap();
    let other_inst = RelationGraph::new(names, Matrix::filled(5, 5, 1.0), RelationKind::Institution).unwrap();
    let after = forward(
        &batch,
        Graphs::new(&other_ind, &other_inst),
        &model,
        Mode::Eval,
        &mut rng(),
    )
    .unwrap();
    assert_eq!(before.predictions, after.predictions);
}

#[test]
fn misordered_graph_is_rejected() {
    let (batch, ind, inst) = common::tiny_problem(3, 2, 3);
    let model = GriffinModel::new(common::tiny_config(), 3).unwrap();
    let swapped = ind.permute(&[1, 0, 2]).unwrap();
    assert!(forward(&batch, Graphs::new(&swapped, &inst), &model, Mode::Eval, &mut rng()).is_err());
}

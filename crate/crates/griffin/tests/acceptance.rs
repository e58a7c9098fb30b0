//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run everything with `cargo test -p griffin --test acceptance`, or pick
//! criteria by number: `cargo test -p griffin --test acceptance -- 4 7`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use griffin::{checkpoint, io, report};
use griffin_core::data::{preprocess_labels, synth_generate, DateRange, SynthConfig, SynthData};
use griffin_core::evaluation::{
    backtest_topk, evaluate, ic, portfolio_stats, rank_ic, BacktestResult, DailyPrediction, EvalOptions,
};
use griffin_core::model::{
    encoder_layer, forward, forward_on_tape, gated_fusion, names, relation_attention, Graphs, GriffinModel, ModelConfig,
};
use griffin_core::numerics::{finite_diff_check, Matrix, Mode, Tape, DEFAULT_STEP};
use griffin_core::relations::{RelationGraph, RelationKind};
use griffin_core::rng::{stream, Stream};
use griffin_core::training::{loss_on_tape, train, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = fn() -> Result<String>;

const CRITERIA: [(usize, &str, Criterion, u64); 9] = [
    (1, "gradient correctness", gradient_correctness, 60),
    (2, "overfit sanity", overfit_sanity, 300),
    (3, "relation ablation direction", ablation_direction, 600),
    (4, "metric oracle equivalence", metric_oracles, 60),
    (5, "architectural reductions", reductions, 60),
    (6, "determinism and persistence", determinism, 120),
    (7, "backtest identities", backtest_identities, 60),
    (8, "gate analysis structure", gate_structure, 120),
    (9, "permutation equivariance", equivariance, 60),
];

fn main() -> ExitCode {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run, budget) in CRITERIA {
        if !picked.is_empty() && !picked.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let took = t0.elapsed();
        let verdict = match outcome {
            Ok(Ok(detail)) if took <= Duration::from_secs(budget) => Ok(detail),
            Ok(Ok(detail)) => Err(format!("{detail}; over the {budget} s budget")),
            Ok(Err(e)) => Err(format!("{e:#}")),
            Err(_) => Err("panicked".to_string()),
        };
        match verdict {
            Ok(d) => println!("criterion {id} ({name}): PASS [{:.1} s] {d}", took.as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{:.1} s] {d}", took.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn synth(n: usize, dates: usize, seed: u64, strength: f64, dc: usize, dm: usize) -> SynthData {
    synth_generate(&SynthConfig {
        n_stocks: n,
        n_dates: dates,
        seed,
        signal_strength: strength,
        d_company: dc,
        d_market: dm,
        ..SynthConfig::default()
    })
    .expect("synthetic data")
}

fn small_model(dc: usize, dm: usize, d_model: usize) -> ModelConfig {
    ModelConfig {
        d_model,
        n_heads: 2,
        n_layers: 1,
        dropout: 0.0,
        d_company: dc,
        d_market: dm,
        ffn_multiplier: 2,
        ..ModelConfig::default()
    }
}

/// Graphs with off-diagonal weights strictly between 0 and 1 for the
/// institution relation and a two-block industry relation.
fn dense_graphs(tickers: &[String]) -> (RelationGraph, RelationGraph) {
    let n = tickers.len();
    let mut ind = Matrix::identity(n).into_vec();
    let mut inst = Matrix::identity(n).into_vec();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                ind[i * n + j] = if i % 2 == j % 2 { 1.0 } else { 0.0 };
                inst[i * n + j] = 0.1 + 0.1 * ((i + j) % 4) as f64;
            }
        }
    }
    (
        RelationGraph::new(
            tickers.to_vec(),
            Matrix::new(n, n, ind).unwrap(),
            RelationKind::Industry,
        )
        .unwrap(),
        RelationGraph::new(
            tickers.to_vec(),
            Matrix::new(n, n, inst).unwrap(),
            RelationKind::Institution,
        )
        .unwrap(),
    )
}

fn gradient_correctness() -> Result<String> {
    let data = synth(4, 5, 3, 0.5, 5, 3);
    let batch = data.panel.window(4, 3)?;
    let (ind, inst) = dense_graphs(&batch.tickers);
    let cfg = ModelConfig {
        dropout: 0.15,
        ..small_model(5, 3, 8)
    };
    let mut model = GriffinModel::new(cfg.clone(), 3)?;
    // Move gates, α and layer norms off their symmetric init so every path carries gradient.
    for (name, p) in model.params.iter_mut() {
        if name.starts_with("gate.") || name.ends_with("alpha") || name.contains("ln") {
            let base = if name.contains("gamma") || name.ends_with("alpha") {
                1.0
            } else {
                0.0
            };
            let vals: Vec<f64> = (0..p.value.len())
                .map(|k| base + 0.1 * ((k * 7 + 3) % 11) as f64 / 11.0 - 0.05)
                .collect();
            p.value = Matrix::new(p.value.rows(), p.value.cols(), vals)?;
        }
    }
    let target = Matrix::column_vector(&batch.targets)?;
    let mut worst: f64 = 0.0;
    for mode in [Mode::Eval, Mode::Train] {
        let err = finite_diff_check(
            |params, tape| {
                let m = GriffinModel {
                    config: cfg.clone(),
                    params: params.clone(),
                };
                let mut rng = stream(11, Stream::Dropout);
                let out = forward_on_tape(tape, &batch, Graphs::new(&ind, &inst), &m, mode, &mut rng)?;
                loss_on_tape(tape, out.predictions, &target, params, 1e-3)
            },
            &mut model.params,
            DEFAULT_STEP,
        )?;
        worst = worst.max(err);
    }
    ensure!(worst <= 1e-4, "max relative error {worst:.3e} > 1e-4");
    Ok(format!(
        "max relative error {worst:.2e} over {} parameters",
        model.num_parameters()
    ))
}

fn overfit_sanity() -> Result<String> {
    let data = synth(20, 50, 0, 0.5, 8, 4);
    let panel = preprocess_labels(data.panel, 0.01, 0.99)?;
    let all = DateRange::new(&panel.dates()[0], &panel.dates()[49])?;
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 200,
        window: 8,
        l2_lambda: 0.0,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let out = train(
        &panel,
        Graphs::new(&data.industry, &data.institution),
        &small_model(8, 4, 32),
        &cfg,
        &all,
        None,
    )?;
    let first = out.log[0].train_loss;
    let last = out.log.last().unwrap().train_loss;
    ensure!(
        last <= 0.01 * first,
        "final loss {last:.4e} vs epoch-1 loss {first:.4e}"
    );
    Ok(format!("loss {first:.4} -> {last:.2e} in {} epochs", cfg.epochs))
}

fn ablation_direction() -> Result<String> {
    let mut gaps = Vec::new();
    let mut detail = Vec::new();
    for seed in 0..5 {
        let data = synth(50, 500, seed, 2.0, 8, 4);
        let panel = preprocess_labels(data.panel, 0.01, 0.99)?;
        let d = panel.dates();
        let tr = DateRange::new(&d[0], &d[339])?;
        let va = DateRange::new(&d[340], &d[399])?;
        let te = DateRange::new(&d[400], &d[499])?;
        let graphs = Graphs::new(&data.industry, &data.institution);
        let mut ics = [0.0; 2];
        for (slot, bias) in [true, false].into_iter().enumerate() {
            let mc = ModelConfig {
                dropout: 0.1,
                use_relation_bias: bias,
                ..small_model(8, 4, 16)
            };
            let tc = TrainConfig {
                learning_rate: 3e-3,
                epochs: 6,
                window: 8,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&panel, graphs, &mc, &tc, &tr, Some(&va))?;
            let rep = evaluate(
                &panel,
                graphs,
                &out.model,
                &te,
                &EvalOptions {
                    steps: 8,
                    ..EvalOptions::default()
                },
            )?;
            ics[slot] = rep.ic?;
        }
        gaps.push(ics[0] - ics[1]);
        detail.push(format!("{:.3}/{:.3}", ics[0], ics[1]));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    ensure!(
        mean >= 0.02,
        "mean IC gap {mean:.4} < 0.02 (full/ablated per seed: {})",
        detail.join(", ")
    );
    Ok(format!(
        "mean IC gap {mean:.3} (full/ablated per seed: {})",
        detail.join(", ")
    ))
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let below = x.iter().filter(|b| *b < a).count() as f64;
            let same = x.iter().filter(|b| *b == a).count() as f64;
            below + (same + 1.0) / 2.0
        })
        .collect()
}

fn sample_sd(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn metric_oracles() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 1000 {
        let n = rng.random_range(2..=50);
        let tied = done % 4 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if tied {
                    rng.random_range(0..5) as f64
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let returns: Vec<f64> = (0..n).map(|_| rng.random_range(-0.1..0.1)).collect();
        if scores.windows(2).all(|w| w[0] == w[1]) {
            continue;
        }
        let tickers = (0..n).map(|i| format!("T{i}")).collect();
        let day = DailyPrediction::new("2021-01-04", tickers, scores.clone(), returns.clone())?;
        let e1 = (ic(&day)? - oracle_pearson(&scores, &returns)).abs();
        let e2 = (rank_ic(&day)? - oracle_pearson(&oracle_ranks(&scores), &oracle_ranks(&returns))).abs();
        worst = worst.max(e1).max(e2);
        done += 1;
    }
    ensure!(worst <= 1e-12, "IC/RankIC differ from brute force by {worst:.3e}");

    let mut worst_stats: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..300);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-0.04..0.04)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-0.02..0.02)).collect();
        let rf = rng.random_range(0.0..2e-4);
        let res = BacktestResult {
            dates: vec![String::new(); n],
            portfolio: p.clone(),
            benchmark: b.clone(),
        };
        let s = portfolio_stats(&res, rf, 252)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ex: Vec<f64> = p.iter().zip(&b).map(|(x, y)| x - y).collect();
        let over: Vec<f64> = p.iter().map(|x| x - rf).collect();
        let root = 252f64.sqrt();
        let cumulative = p.iter().map(|r| 1.0 + r).product::<f64>() - 1.0;
        for (got, want) in [
            (s.ar, 252.0 * mean(&ex)),
            (s.ir?, mean(&ex) / sample_sd(&ex) * root),
            (s.sharpe?, mean(&over) / sample_sd(&over) * root),
            (s.cumulative, cumulative),
            (s.volatility, sample_sd(&p) * root),
        ] {
            worst_stats = worst_stats.max((got - want).abs());
        }
    }
    ensure!(
        worst_stats <= 1e-12,
        "portfolio statistics differ from hand formulas by {worst_stats:.3e}"
    );
    Ok(format!(
        "max deviation {:.1e} (correlations), {worst_stats:.1e} (portfolio stats)",
        worst
    ))
}

fn reductions() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 7;
    let tickers: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
    let (ind, inst) = dense_graphs(&tickers);
    let x_t = Matrix::new(n, 8, (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    // α = 0 against the model without the bias term, sharing every other weight.
    let mut biased = GriffinModel::new(small_model(5, 3, 8), 1)?;
    for kind in [RelationKind::Industry, RelationKind::Institution] {
        biased
            .params
            .set_value(&names::relation(kind, "alpha"), Matrix::scalar(0.0))?;
    }
    let plain_cfg = ModelConfig {
        use_relation_bias: false,
        ..biased.config.clone()
    };
    let mut plain = GriffinModel::new(plain_cfg, 99)?;
    let shared: Vec<String> = plain.params.names().map(String::from).collect();
    for name in shared {
        plain.params.set_value(&name, biased.params.value(&name)?.clone())?;
    }
    let mut worst_alpha: f64 = 0.0;
    for (g, kind) in [(&ind, RelationKind::Industry), (&inst, RelationKind::Institution)] {
        let mut outs = Vec::new();
        for m in [&biased, &plain] {
            let mut tape = Tape::new();
            let x = tape.constant(x_t.clone())?;
            let y = relation_attention(
                &mut tape,
                x,
                &tickers,
                g,
                m,
                kind,
                Mode::Eval,
                &mut stream(0, Stream::Dropout),
            )?;
            outs.push(tape.value(y).clone());
        }
        worst_alpha = worst_alpha.max(outs[0].max_abs_diff(&outs[1])?);
    }
    ensure!(
        worst_alpha <= 1e-12,
        "alpha = 0 differs from unbiased attention by {worst_alpha:.3e}"
    );

    // Zero gate parameters give gates of exactly one half.
    let model = GriffinModel::new(small_model(5, 3, 8), 2)?;
    let mut tape = Tape::new();
    let x = tape.constant(x_t.clone())?;
    let a = tape.constant(x_t.map(|v| v * 0.5))?;
    let b = tape.constant(x_t.map(|v| -v))?;
    let (_, gates) = gated_fusion(&mut tape, x, a, b, &model)?;
    let gates = gates.expect("gating enabled");
    for g in gates {
        ensure!(
            tape.value(g).as_slice().iter().all(|v| *v == 0.5),
            "a gate differs from 0.5"
        );
    }

    // Zeroed output maps make the encoder layer the identity.
    let mut enc = GriffinModel::new(small_model(5, 3, 8), 3)?;
    for item in ["attn.w_o", "ffn.w2", "ffn.b2"] {
        let name = names::encoder(0, item);
        let (r, c) = enc.params.value(&name)?.shape();
        enc.params.set_value(&name, Matrix::zeros(r, c))?;
    }
    let steps = 4;
    let xs = Matrix::new(
        3 * steps,
        8,
        (0..3 * steps * 8).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )?;
    let mut tape = Tape::new();
    let x = tape.constant(xs.clone())?;
    let y = encoder_layer(
        &mut tape,
        x,
        3,
        steps,
        0,
        &enc,
        Mode::Eval,
        &mut stream(0, Stream::Dropout),
    )?;
    let enc_err = tape.value(y).max_abs_diff(&xs)?;
    ensure!(
        enc_err <= 1e-12,
        "encoder with zeroed outputs moved its input by {enc_err:.3e}"
    );
    Ok(format!(
        "alpha=0 deviation {worst_alpha:.1e}; gates exactly 0.5; encoder deviation {enc_err:.1e}"
    ))
}

fn run_cli(args: &[&str]) -> Result<String> {
    griffin::run(args.iter().copied())
}

fn files_equal(a: &Path, b: &Path) -> Result<bool> {
    Ok(std::fs::read(a)? == std::fs::read(b)?)
}

fn determinism() -> Result<String> {
    // Fixed-seed training is bit-identical.
    let data = synth(8, 40, 4, 0.5, 5, 3);
    let panel = preprocess_labels(data.panel.clone(), 0.01, 0.99)?;
    let d = panel.dates();
    let tr = DateRange::new(&d[0], &d[29])?;
    let va = DateRange::new(&d[30], &d[39])?;
    let mc = ModelConfig {
        dropout: 0.15,
        ..small_model(5, 3, 8)
    };
    let tc = TrainConfig {
        learning_rate: 1e-2,
        epochs: 3,
        window: 4,
        seed: 17,
        ..TrainConfig::default()
    };
    let graphs = Graphs::new(&data.industry, &data.institution);
    let a = train(&panel, graphs, &mc, &tc, &tr, Some(&va))?;
    let b = train(&panel, graphs, &mc, &tc, &tr, Some(&va))?;
    ensure!(
        a.model.params == b.model.params,
        "trained parameters differ between runs"
    );
    ensure!(
        format!("{:?}", a.log) == format!("{:?}", b.log),
        "training logs differ between runs"
    );

    // Checkpoint round trip keeps eval predictions bit-exact.
    let dir = tempfile::tempdir()?;
    let ck = dir.path().join("model.bin");
    checkpoint::save(&a.model, &ck)?;
    let restored = checkpoint::load(&ck)?;
    for end in 30..40 {
        let batch = panel.window(end, 4)?;
        let p1 = forward(&batch, graphs, &a.model, Mode::Eval, &mut stream(0, Stream::Dropout))?;
        let p2 = forward(&batch, graphs, &restored, Mode::Eval, &mut stream(0, Stream::Dropout))?;
        let same = p1
            .predictions
            .iter()
            .zip(&p2.predictions)
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(same, "restored model predicts differently on {}", batch.target_date());
    }

    // gen-data is byte-reproducible.
    let sets = [
        "--set",
        "n_stocks=15",
        "--set",
        "n_dates=40",
        "--set",
        "d_company=6",
        "--set",
        "d_market=2",
    ];
    let mut outs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("gen{k}"));
        let out_s = out.to_str().unwrap().to_string();
        let mut args = vec!["gen-data", "--seed", "7", "--out", &out_s];
        args.extend(sets);
        run_cli(&args)?;
        outs.push(out);
    }
    for f in ["features.csv", "returns.csv", "industry.csv", "holdings.csv"] {
        ensure!(
            files_equal(&outs[0].join(f), &outs[1].join(f))?,
            "{f} differs between gen-data runs"
        );
    }
    Ok("training, checkpoint predictions and gen-data files reproduce exactly".to_string())
}

fn backtest_identities() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 25;
    let tickers: Vec<String> = (0..n).map(|i| format!("X{i:02}")).collect();
    let days: Vec<DailyPrediction> = (0..60)
        .map(|d| {
            let scores = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let returns = (0..n).map(|_| rng.random_range(-0.03..0.03)).collect();
            DailyPrediction::new(
                &format!("2022-{:02}-{:02}", 1 + d / 28, 1 + d % 28),
                tickers.clone(),
                scores,
                returns,
            )
            .unwrap()
        })
        .collect();

    let full = backtest_topk(&days, n)?;
    ensure!(
        full.excess().iter().all(|e| *e == 0.0),
        "k = N leaves non-zero excess returns"
    );

    // Cumulative return from the files the backtest command writes.
    let dir = tempfile::tempdir()?;
    let out = dir.path().to_str().unwrap();
    io::write_predictions(&days, &dir.path().join("predictions.csv"))?;
    run_cli(&["backtest", "--out", out, "--set", "top_k=5"])?;
    let stats = report::load_metrics(&dir.path().join("backtest_stats.csv"))?;
    let cumulative = stats.iter().find(|s| s.0 == "cumulative_return").map(|s| s.1).unwrap();
    let text = std::fs::read_to_string(dir.path().join("backtest.csv"))?;
    let series: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    ensure!(series.len() == days.len(), "backtest.csv has {} rows", series.len());
    let product = series.iter().map(|r| 1.0 + r).product::<f64>() - 1.0;
    ensure!(
        (cumulative - product).abs() <= 1e-12,
        "cumulative {cumulative} vs product {product}"
    );

    // Tie-breaking does not depend on the order stocks are listed in.
    let base = backtest_topk(&days, 5)?;
    for _ in 0..20 {
        let shuffled: Vec<DailyPrediction> = days
            .iter()
            .map(|d| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                DailyPrediction::new(
                    &d.date,
                    idx.iter().map(|&i| d.tickers[i].clone()).collect(),
                    idx.iter().map(|&i| d.scores[i]).collect(),
                    idx.iter().map(|&i| d.returns[i]).collect(),
                )
                .unwrap()
            })
            .collect();
        ensure!(
            backtest_topk(&shuffled, 5)? == base,
            "top-k result changed under stock reordering"
        );
    }
    Ok(format!(
        "zero excess at k = N; cumulative matches to {:.1e}; ties stable",
        (cumulative - product).abs()
    ))
}

fn gate_structure() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let out = dir.path().to_str().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        "n_stocks = 20\nn_dates = 160\nd_company = 6\nd_market = 3\nd_model = 8\nn_heads = 2\n\
         dropout = 0.1\nepochs = 2\nwindow = 8\nlearning_rate = 3e-3\ntop_k = 5\n",
    )?;
    let conf = conf.to_str().unwrap();
    run_cli(&["gen-data", "--config", conf, "--out", out])?;
    let panel = io::load_panel_csv(&dir.path().join("features.csv"), &dir.path().join("returns.csv"), 6, 3)?;
    let d = panel.dates();
    let split = [
        format!("train_start={}", d[0]),
        format!("train_end={}", d[59]),
        format!("test_start={}", d[60]),
        format!("test_end={}", d[159]),
    ];
    let mut sets = Vec::new();
    for s in &split {
        sets.extend(["--set", s.as_str()]);
    }
    for cmd in ["build-graphs", "train", "evaluate", "analyze-gates"] {
        let mut args = vec![cmd, "--config", conf, "--out", out];
        args.extend(sets.iter().copied());
        run_cli(&args)?;
    }
    let metrics = report::load_metrics(&dir.path().join("metrics.csv"))?;
    ensure!(
        metrics.iter().any(|m| m.0 == "ic" && m.1.is_finite()),
        "metrics.csv lacks a finite IC"
    );

    let text = std::fs::read_to_string(dir.path().join("gates.csv"))?;
    let mut lines = text.lines();
    ensure!(
        lines.next() == Some("date,mean_gate_ind,mean_gate_inst,group"),
        "gates.csv header"
    );
    let mut dates = Vec::new();
    let (mut up, mut down) = (Vec::new(), Vec::new());
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        ensure!(f.len() == 4, "gates.csv row `{l}`");
        for v in &f[1..3] {
            let g: f64 = v.parse()?;
            ensure!(g > 0.0 && g < 1.0, "gate mean {g} outside (0, 1)");
        }
        match f[3] {
            "up" => up.push(f[0].to_string()),
            "down" => down.push(f[0].to_string()),
            "normal" => {}
            other => anyhow::bail!("unknown group `{other}`"),
        }
        dates.push(f[0].to_string());
    }
    ensure!(dates.len() == 100, "{} test days instead of 100", dates.len());
    ensure!(
        up.len() == 5 && down.len() == 5,
        "{} up and {} down days",
        up.len(),
        down.len()
    );
    ensure!(up.iter().all(|d| !down.contains(d)), "up and down days overlap");

    let preds = io::load_predictions(&dir.path().join("predictions.csv"))?;
    let pred_dates: Vec<String> = preds.iter().map(|p| p.date.clone()).collect();
    ensure!(pred_dates == dates, "gate dates do not align with prediction dates");
    let rep = griffin::cli::gate_report(&griffin::parse_config(
        Some(Path::new(conf)),
        &[vec![format!("out_dir={out}")], split.to_vec()].concat(),
    )?)?;
    for g in [&rep.up, &rep.down, &rep.normal] {
        ensure!(
            g.industry > 0.0 && g.industry < 1.0 && g.institution > 0.0 && g.institution < 1.0,
            "group mean outside (0, 1)"
        );
    }
    Ok(format!(
        "100 days, 5 up / 5 down; industry gate up {:.3} down {:.3} normal {:.3}",
        rep.up.industry, rep.down.industry, rep.normal.industry
    ))
}

fn equivariance() -> Result<String> {
    let mut checked = 0;
    for seed in 0..5 {
        let data = synth(15, 12, seed, 0.5, 5, 3);
        let batch = data.panel.window(11, 6)?;
        for cfg in [
            ModelConfig {
                d_model: 16,
                n_heads: 4,
                ..small_model(5, 3, 16)
            },
            ModelConfig {
                use_cross_stock_attention: false,
                ..small_model(5, 3, 8)
            },
        ] {
            let model = GriffinModel::new(cfg, seed)?;
            let base = forward(
                &batch,
                Graphs::new(&data.industry, &data.institution),
                &model,
                Mode::Eval,
                &mut stream(0, Stream::Dropout),
            )?;
            let mut perm: Vec<usize> = (0..15).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 50));
            let pb = batch.permute_stocks(&perm)?;
            let (pi, ps) = (data.industry.permute(&perm)?, data.institution.permute(&perm)?);
            let out = forward(
                &pb,
                Graphs::new(&pi, &ps),
                &model,
                Mode::Eval,
                &mut stream(0, Stream::Dropout),
            )?;
            for (k, &old) in perm.iter().enumerate() {
                ensure!(
                    out.predictions[k].to_bits() == base.predictions[old].to_bits(),
                    "seed {seed}: stock {old} predicted {} before and {} after permutation",
                    base.predictions[old],
                    out.predictions[k]
                );
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} permuted forwards reproduce predictions bit-for-bit"))
}

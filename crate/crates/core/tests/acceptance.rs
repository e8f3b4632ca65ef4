//! Acceptance criteria, one line each. Reference computations are written
//! out here with plain loops rather than reusing the library kernels.
//!
//! Set `DIMWISE_ACCEPT=1,2,7` to run a subset.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use dimwise::analysis::{
    bench_sweep, count_dim_attention, count_masked_attention, count_token_attention, flops_dim_attention,
    flops_masked_attention, flops_token_attention, BenchVariant,
};
use dimwise::attention::{
    conv_extract, covariance_identity_check, dim_attention_factored, dim_score, explicit_rep, implicit_rep, kr_tensor,
    ConvFilter, NormMode,
};
use dimwise::grad::{fd_check_with, ConvMixing, OpKind, Scalarize, FD_STEP, IGNORE};
use dimwise::harness::{apply_mlm_mask, train, AttentionFamily, Dataset, MaskProbs, MaskStats, RunConfig, RunOutputs};
use dimwise::masked::{masked_output, MaskedMode};
use dimwise::model::{decoder_forward, loss_and_grads, AttentionKind, Batch, BlockConfig, Direction, Model};
use dimwise::numerics::{rand_uniform, Rng, SoftmaxAxis, Tensor};

// Tolerances and budgets, fixed here.
const C1_TOL: f64 = 1e-10;
const C1_CASES: usize = 200;
const C1_BUDGET: Duration = Duration::from_secs(10);
const C2_TOL: f64 = 1e-10;
const C2_CASES: usize = 100;
const C2_BUDGET: Duration = Duration::from_secs(30);
const C3_CONFIGS: usize = 50;
const C3_STREAMING_TOL: f64 = 1e-12;
const C4_TOL: f64 = 1e-10;
const C4_CASES: usize = 50;
const C5_TOL: f64 = 1e-12;
const C6_OP_TOL: f64 = 1e-4;
const C6_MODEL_TOL: f64 = 1e-3;
const C6_H: f64 = 1e-5;
const C8_DIM_RANGE: (f64, f64) = (1.5, 3.0);
const C8_TOKEN_RANGE: (f64, f64) = (3.0, 5.5);
const C8_NS: [usize; 3] = [1024, 2048, 4096];
const C8_D: usize = 64;
const C8_REPEATS: usize = 5;
const C8_BUDGET: Duration = Duration::from_secs(300);
const C9_QUALITATIVE: (f64, f64) = (2.0, 4.0);
const C10_NLL_FRACTION: f64 = 0.8;
const C10_BASELINE_BAND: f64 = 0.15;
const C10_MIN_BYTES: usize = 200 * 1024;
const C10_BUDGET: Duration = Duration::from_secs(30 * 60);
const C10_MASK_SELECT: (f64, f64) = (0.15, 0.01);
const C10_MASK_SPLIT_TOL: f64 = 0.02;
const C10_MASK_MIN_TOKENS: usize = 100_000;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(o: &Outcome) {
    let mut out = std::io::stdout().lock();
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "[{tag}] criterion {:>2} {}: {}", o.id, o.name, o.detail);
    let _ = out.flush();
}

fn rand(shape: &[usize], rng: &mut Rng) -> Tensor {
    rand_uniform(shape, -1.0, 1.0, rng)
}

fn size(rng: &mut Rng, max: usize) -> usize {
    1 + rng.below(max as u64) as usize
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `f(S)` by loops.
fn normalize(s: &[Vec<f64>], mode: NormMode, n: usize) -> Vec<Vec<f64>> {
    let d = s.len();
    match mode {
        NormMode::None => s.to_vec(),
        NormMode::ScaleInvSqrtN => s.iter().map(|r| r.iter().map(|x| x / (n as f64).sqrt()).collect()).collect(),
        NormMode::SoftmaxRowsOverK => s.iter().map(|r| softmax(r)).collect(),
        NormMode::SoftmaxColsOverJ => {
            let mut out = vec![vec![0.0; d]; d];
            for k in 0..d {
                let col: Vec<f64> = (0..d).map(|j| s[j][k]).collect();
                for (j, p) in softmax(&col).into_iter().enumerate() {
                    out[j][k] = p;
                }
            }
            out
        }
    }
}

/// Score, Khatri-Rao tensor and filter contraction, each fully materialized.
fn materialized(q: &Tensor, k: &Tensor, v: &Tensor, w: &Tensor, mode: NormMode) -> Tensor {
    let (n, d) = (q.rows(), q.cols());
    let s: Vec<Vec<f64>> =
        (0..d).map(|j| (0..d).map(|kk| (0..n).map(|i| q.get2(i, j) * k.get2(i, kk)).sum()).collect()).collect();
    let fs = normalize(&s, mode, n);
    let x: Vec<Vec<Vec<f64>>> =
        (0..n).map(|i| (0..d).map(|j| (0..d).map(|kk| fs[j][kk] * v.get2(i, kk)).collect()).collect()).collect();
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        for j in 0..d {
            out.set2(i, j, (0..d).map(|m| w.get2(j, m) * x[i][j][m]).sum());
        }
    }
    out
}

fn c1() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(101);
    let mut worst = 0.0f64;
    for c in 0..C1_CASES {
        let (n, d) = (size(&mut rng, 64), size(&mut rng, 16));
        let mode = NormMode::ALL[c % NormMode::ALL.len()];
        let (q, k, v, w) = (rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[d, d], &mut rng));
        let fast = dim_attention_factored(&q, &k, &v, &ConvFilter::new(w.clone()).unwrap(), mode).unwrap();
        worst = worst.max(fast.max_abs_diff(&materialized(&q, &k, &v, &w, mode)));
    }
    let t = start.elapsed();
    Outcome {
        id: 1,
        name: "factored = materialized",
        pass: worst <= C1_TOL && t < C1_BUDGET,
        detail: format!("{C1_CASES} cases, max |diff| {worst:.2e} (tol {C1_TOL:e}), {:.2}s (budget {}s)", t.as_secs_f64(), C1_BUDGET.as_secs()),
    }
}

/// Causal output by four nested loops over output position, column,
/// filter index and prefix position.
fn masked_reference(q: &Tensor, k: &Tensor, v: &Tensor, w: &Tensor) -> Tensor {
    let (n, d) = (q.rows(), q.cols());
    let mut out = Tensor::zeros(&[n, d]);
    for t in 0..n {
        for j in 0..d {
            let mut acc = 0.0;
            for m in 0..d {
                let mut s = 0.0;
                for src in 0..=t {
                    s += q.get2(src, j) * k.get2(src, m);
                }
                acc += w.get2(j, m) * s * v.get2(t, m);
            }
            out.set2(t, j, acc);
        }
    }
    out
}

fn c2() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(202);
    let mut worst = 0.0f64;
    for _ in 0..C2_CASES {
        let (n, d) = (size(&mut rng, 32), size(&mut rng, 8));
        let (q, k, v, w) = (rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[d, d], &mut rng));
        let filter = ConvFilter::new(w.clone()).unwrap();
        let reference = masked_reference(&q, &k, &v, &w);
        for mode in [MaskedMode::Streaming, MaskedMode::Naive] {
            worst = worst.max(masked_output(&q, &k, &v, &filter, mode).unwrap().max_abs_diff(&reference));
        }
    }
    let t = start.elapsed();
    Outcome {
        id: 2,
        name: "streaming = naive masked",
        pass: worst <= C2_TOL && t < C2_BUDGET,
        detail: format!("{C2_CASES} cases, max |diff| {worst:.2e} (tol {C2_TOL:e}), {:.2}s (budget {}s)", t.as_secs_f64(), C2_BUDGET.as_secs()),
    }
}

fn c3() -> Outcome {
    let mut rng = Rng::new(303);
    let (mut naive_worst, mut streaming_worst) = (0.0f64, 0.0f64);
    for case in 0..C3_CONFIGS {
        let vocab = 12;
        let mut cfg = BlockConfig::tiny(vocab);
        cfg.d_model = 4 * size(&mut rng, 2);
        cfg.layers = size(&mut rng, 2);
        cfg.attention = AttentionKind::DimMultiConv { groups: size(&mut rng, 2), convs: size(&mut rng, 2) };
        cfg.head_dim = Some(1 + size(&mut rng, 3));
        cfg.scale_positions = case % 2 == 1;
        let n = 2 + rng.below(11) as usize;
        let cut = 1 + rng.below(n as u64 - 1) as usize;
        let ids: Vec<u32> = (0..n).map(|_| rng.below(vocab as u64) as u32).collect();
        let mut changed = ids.clone();
        for t in &mut changed[cut..] {
            *t = (*t + 1 + rng.below(vocab as u64 - 1) as u32) % vocab as u32;
        }
        for mode in [MaskedMode::Naive, MaskedMode::Streaming] {
            cfg.masked_mode = mode;
            let model = Model::<f64>::new(cfg.clone(), case as u64).unwrap();
            let a = decoder_forward(&ids, &model).unwrap();
            let b = decoder_forward(&changed, &model).unwrap();
            let diff = (0..cut)
                .flat_map(|t| a.row(t).iter().zip(b.row(t)).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
                .fold(0.0, f64::max);
            match mode {
                MaskedMode::Naive => naive_worst = naive_worst.max(diff),
                MaskedMode::Streaming => streaming_worst = streaming_worst.max(diff),
            }
        }
    }
    Outcome {
        id: 3,
        name: "decoder causality",
        pass: naive_worst == 0.0 && streaming_worst <= C3_STREAMING_TOL,
        detail: format!(
            "{C3_CONFIGS} configs, prefix change naive {naive_worst:e} (must be 0), streaming {streaming_worst:.2e} (tol {C3_STREAMING_TOL:e})"
        ),
    }
}

fn c4() -> Outcome {
    let mut rng = Rng::new(404);
    let mut worst = 0.0f64;
    for _ in 0..C4_CASES {
        let (n, d, e) = (2 + rng.below(40) as usize, size(&mut rng, 12), size(&mut rng, 12));
        let mut h = rand(&[n, d], &mut rng);
        for j in 0..d {
            let mean = (0..n).map(|i| h.get2(i, j)).sum::<f64>() / n as f64;
            for i in 0..n {
                h.set2(i, j, h.get2(i, j) - mean);
            }
        }
        let (wq, wk) = (rand(&[d, e], &mut rng), rand(&[d, e], &mut rng));
        // Sample covariance, then (N − 1)·Wqᵀ·C·Wk by loops.
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|a| (0..d).map(|b| (0..n).map(|i| h.get2(i, a) * h.get2(i, b)).sum::<f64>() / (n - 1) as f64).collect())
            .collect();
        let s = dim_score(&dimwise::numerics::matmul(&h, &wq).unwrap(), &dimwise::numerics::matmul(&h, &wk).unwrap()).unwrap();
        for x in 0..e {
            for y in 0..e {
                let mut r = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        r += wq.get2(a, x) * cov[a][b] * wk.get2(b, y);
                    }
                }
                worst = worst.max((s.get2(x, y) - (n - 1) as f64 * r).abs());
            }
        }
        worst = worst.max(covariance_identity_check(&h, &wq, &wk).unwrap());
    }
    Outcome {
        id: 4,
        name: "score = projected covariance",
        pass: worst <= C4_TOL,
        detail: format!("{C4_CASES} centered inputs, max |diff| {worst:.2e} (tol {C4_TOL:e})"),
    }
}

fn c5() -> Outcome {
    let mut rng = Rng::new(505);
    let (mut explicit, mut implicit) = (0.0f64, 0.0f64);
    let mut ones_exact = true;
    for _ in 0..50 {
        let (n, d) = (size(&mut rng, 24), size(&mut rng, 10));
        let (q, k, v) = (rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[n, d], &mut rng));
        let s = dim_score(&q, &k).unwrap();
        let sv: Vec<Vec<f64>> = (0..d).map(|j| s.row(j).to_vec()).collect();
        explicit = explicit.max(explicit_rep(&kr_tensor(&s, &v, NormMode::SoftmaxColsOverJ).unwrap()).unwrap().max_abs_diff(&v));
        for mode in NormMode::ALL {
            let x = kr_tensor(&s, &v, mode).unwrap();
            let imp = implicit_rep(&x).unwrap();
            let fs = normalize(&sv, mode, n);
            for i in 0..n {
                for j in 0..d {
                    let r: f64 = (0..d).map(|kk| v.get2(i, kk) * fs[j][kk]).sum();
                    implicit = implicit.max((imp.get2(i, j) - r).abs());
                }
            }
            ones_exact &= conv_extract(&x, &ConvFilter::ones(d)).unwrap() == imp;
        }
    }
    Outcome {
        id: 5,
        name: "explicit / implicit representations",
        pass: explicit <= C5_TOL && implicit <= C5_TOL && ones_exact,
        detail: format!(
            "explicit-V {explicit:.2e}, implicit-V·f(S)ᵀ {implicit:.2e} (tol {C5_TOL:e}); ones filter bit-equal to implicit: {ones_exact}"
        ),
    }
}

fn op_cases(rng: &mut Rng) -> Vec<(OpKind, Vec<Tensor>)> {
    let mut r = |s: &[usize]| rand(s, rng);
    let off_kink = |t: Tensor| t.map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 });
    let mut cases = vec![
        (OpKind::Matmul, vec![r(&[3, 4]), r(&[4, 2])]),
        (OpKind::Linear, vec![r(&[3, 4]), r(&[4, 2]), r(&[2])]),
        (OpKind::Relu, vec![off_kink(r(&[3, 4]))]),
        (OpKind::Softmax(SoftmaxAxis::RowsOverK), vec![r(&[3, 4])]),
        (OpKind::Softmax(SoftmaxAxis::ColsOverJ), vec![r(&[3, 4])]),
        (OpKind::LayerNorm, vec![r(&[3, 5]), r(&[5]), r(&[5])]),
        (OpKind::TokenAttention { causal: false }, vec![r(&[5, 3]), r(&[5, 3]), r(&[5, 3])]),
        (OpKind::TokenAttention { causal: true }, vec![r(&[5, 3]), r(&[5, 3]), r(&[5, 3])]),
        (OpKind::Embedding { ids: vec![2, 0, 2, 1], scale: 1.5 }, vec![r(&[3, 4])]),
        (OpKind::CrossEntropy { targets: vec![1, IGNORE, 3] }, vec![r(&[3, 4])]),
    ];
    for mode in NormMode::ALL {
        cases.push((OpKind::DimAttention(mode), vec![r(&[6, 3]), r(&[6, 3]), r(&[6, 3]), r(&[3, 3])]));
    }
    for mode in [MaskedMode::Naive, MaskedMode::Streaming] {
        for scale_positions in [false, true] {
            cases.push((OpKind::MaskedAttention { mode, scale_positions }, vec![r(&[5, 3]), r(&[5, 3]), r(&[5, 3]), r(&[3, 3])]));
        }
    }
    for causal in [false, true] {
        let mut inputs = vec![r(&[5, 4])];
        inputs.extend((0..6).map(|_| r(&[4, 2])));
        inputs.push(r(&[4, 4]));
        cases.push((OpKind::MultiHead { heads: 2, causal }, inputs));
    }
    let mixings = [
        ConvMixing::Global(NormMode::SoftmaxRowsOverK),
        ConvMixing::Global(NormMode::SoftmaxColsOverJ),
        ConvMixing::Causal { mode: MaskedMode::Streaming, scale_positions: true },
    ];
    for mixing in mixings {
        let mut inputs = vec![r(&[5, 4])];
        inputs.extend((0..6).map(|_| r(&[4, 2])));
        inputs.extend((0..4).map(|_| r(&[2, 2])));
        inputs.push(r(&[8, 4]));
        cases.push((OpKind::MultiConv { groups: 2, convs: 2, mixing }, inputs));
    }
    cases
}

/// Central differences on the batch loss over every parameter coordinate.
fn model_fd(model: &Model<f64>, batch: &Batch, dir: Direction) -> f64 {
    let (_, grads) = loss_and_grads(model, batch, dir, None).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut flat = 0;
    for s in 0..probe.params.tensors().len() {
        for e in 0..probe.params.tensors()[s].len() {
            let orig = probe.params.tensors()[s].data()[e];
            probe.params.tensors_mut()[s].data_mut()[e] = orig + C6_H;
            let plus = loss_and_grads(&probe, batch, dir, None).unwrap().0;
            probe.params.tensors_mut()[s].data_mut()[e] = orig - C6_H;
            let minus = loss_and_grads(&probe, batch, dir, None).unwrap().0;
            probe.params.tensors_mut()[s].data_mut()[e] = orig;
            let numeric = (plus - minus) / ((orig + C6_H) - (orig - C6_H));
            let a = analytic[flat];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
            flat += 1;
        }
    }
    worst
}

fn c6() -> Outcome {
    let mut rng = Rng::new(606);
    let cases = op_cases(&mut rng);
    let mut op_worst = 0.0f64;
    let mut worst_op = "";
    for (i, (op, inputs)) in cases.iter().enumerate() {
        let err = fd_check_with(op, inputs, C6_H, Scalarize::Weighted(600 + i as u64)).unwrap();
        if err > op_worst {
            op_worst = err;
            worst_op = op.name();
        }
    }
    assert_eq!(C6_H, FD_STEP);
    let batch = Batch {
        inputs: vec![vec![5, 2, 3, 2, 1, 6], vec![4, 2, 5]],
        targets: vec![vec![IGNORE, 1, IGNORE, 4, IGNORE, 2], vec![IGNORE, 3, IGNORE]],
    };
    let mut model_worst = 0.0f64;
    for attention in [AttentionKind::DimMultiConv { groups: 2, convs: 1 }, AttentionKind::TokenMultiHead { heads: 2 }] {
        let mut cfg = BlockConfig::tiny(7);
        cfg.attention = attention;
        cfg.d_model = 4;
        cfg.layers = 2;
        cfg.ffn_width = 6;
        cfg.max_len = 6;
        let model = Model::<f64>::new(cfg, 66).unwrap();
        model_worst = model_worst.max(model_fd(&model, &batch, Direction::Bidirectional));
    }
    Outcome {
        id: 6,
        name: "finite-difference gradients",
        pass: op_worst <= C6_OP_TOL && model_worst <= C6_MODEL_TOL,
        detail: format!(
            "{} op cases max rel err {op_worst:.2e} ({worst_op}, tol {C6_OP_TOL:e}); tiny 2-layer encoders {model_worst:.2e} (tol {C6_MODEL_TOL:e}); h = {C6_H:e}",
            cases.len()
        ),
    }
}

fn c7() -> Outcome {
    let mut mismatches = Vec::new();
    let shapes = [(1, 1, 1, 1), (3, 2, 1, 3), (8, 4, 2, 2), (12, 6, 3, 1), (20, 8, 2, 4)];
    for (n, d, a, b) in shapes {
        for proj in [false, true] {
            if count_token_attention(n, d, a, proj, 7).unwrap() != flops_token_attention(n, d, a, proj).counts() {
                mismatches.push(format!("token {n}x{d}"));
            }
            if count_dim_attention(n, d, a, b, proj, 7).unwrap() != flops_dim_attention(n, d, a, b, proj).counts() {
                mismatches.push(format!("dim {n}x{d}"));
            }
        }
        for mode in [MaskedMode::Naive, MaskedMode::Streaming] {
            if count_masked_attention(n, d, mode, 7).unwrap() != flops_masked_attention(n, d, mode).counts() {
                mismatches.push(format!("masked {n}x{d}"));
            }
        }
    }
    // The N-dependent part of an affine count c(N) = a·N + b is c(N) − b.
    let mut scaling_ok = true;
    for n in [50usize, 100, 512, 2048] {
        let dim = |n: usize| flops_dim_attention(n, 64, 2, 4, true).total;
        let b = 2 * dim(1) - dim(2);
        scaling_ok &= dim(2 * n) - b == 2 * (dim(n) - b);
        let (t1, t2) = (flops_token_attention(n, 64, 8, true), flops_token_attention(2 * n, 64, 8, true));
        let scores = |r: &dimwise::analysis::FlopsReport| r.component("scores").unwrap().total();
        let wv = |r: &dimwise::analysis::FlopsReport| r.component("weighted_values").unwrap().multiplies;
        scaling_ok &= scores(&t2) == 4 * scores(&t1) && wv(&t2) == 4 * wv(&t1);
    }
    Outcome {
        id: 7,
        name: "FLOPs consistency",
        pass: mismatches.is_empty() && scaling_ok,
        detail: format!(
            "{} shapes analytic vs instrumented mismatches: {:?}; dim N-term doubles and token N² terms quadruple: {scaling_ok}",
            shapes.len(),
            mismatches
        ),
    }
}

fn c8() -> Outcome {
    let start = Instant::now();
    let sweep = bench_sweep(&[BenchVariant::Dim, BenchVariant::Token], &C8_NS, &[C8_D], C8_REPEATS, 8).unwrap();
    let t = start.elapsed();
    let dim = sweep.time_ratios(BenchVariant::Dim, C8_D);
    let tok = sweep.time_ratios(BenchVariant::Token, C8_D);
    let within = |rs: &[f64], (lo, hi): (f64, f64)| rs.iter().all(|r| (lo..=hi).contains(r));
    let fmt = |rs: &[f64]| rs.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ");
    Outcome {
        id: 8,
        name: "wall-clock scaling",
        pass: within(&dim, C8_DIM_RANGE) && within(&tok, C8_TOKEN_RANGE) && t < C8_BUDGET,
        detail: format!(
            "N {:?}, d {C8_D}, median of {C8_REPEATS}: dim ratios [{}] in {:?}, token ratios [{}] in {:?}, {:.1}s (budget {}s)",
            C8_NS,
            fmt(&dim),
            C8_DIM_RANGE,
            fmt(&tok),
            C8_TOKEN_RANGE,
            t.as_secs_f64(),
            C8_BUDGET.as_secs()
        ),
    }
}

fn c9() -> Outcome {
    let token = flops_token_attention(100, 64, 8, true);
    let dim = flops_dim_attention(100, 64, 8, 1, true);
    let ratio = token.total as f64 / dim.total as f64;
    let qualitative = (C9_QUALITATIVE.0..=C9_QUALITATIVE.1).contains(&ratio);
    Outcome {
        id: 9,
        name: "FLOPs ordering at N=100, d_model=512",
        pass: dim.total < token.total,
        detail: format!(
            "dim {} < token {}; token/dim = {ratio:.3} (qualitative {:?}: {}); without projections {:.3}",
            dim.total,
            token.total,
            C9_QUALITATIVE,
            if qualitative { "inside" } else { "outside, reported only" },
            flops_token_attention(100, 64, 8, false).total as f64 / flops_dim_attention(100, 64, 8, 1, false).total as f64
        ),
    }
}

fn c10() -> Outcome {
    let start = Instant::now();
    let dim_cfg = RunConfig::parse(include_str!("../examples/configs/mlm_char.cfg")).unwrap();
    let tok_cfg = RunConfig::parse(include_str!("../examples/configs/mlm_char_token.cfg")).unwrap();
    assert_eq!(tok_cfg.attention, AttentionFamily::Token);
    let data = Dataset::load(&dim_cfg).unwrap();
    let corpus_ok = dim_cfg.synthetic_bytes >= C10_MIN_BYTES && dim_cfg.seq_len == 100 && dim_cfg.layers == 2;

    // Masking statistics over the training windows, one stream per window.
    let mut stats = MaskStats::default();
    for (i, w) in data.train.iter().enumerate() {
        let mut rng = Rng::fork(dim_cfg.train.seed, 99, i as u64);
        if let Ok(row) = apply_mlm_mask(w, &mut rng, MaskProbs::default(), data.vocab_size()) {
            stats.add(&row, w);
        }
    }
    let (m, r, k) = stats.split();
    let mask_ok = stats.eligible >= C10_MASK_MIN_TOKENS
        && (stats.selected_fraction() - C10_MASK_SELECT.0).abs() <= C10_MASK_SELECT.1
        && [(m, 0.8), (r, 0.1), (k, 0.1)].iter().all(|(x, t)| (x - t).abs() <= C10_MASK_SPLIT_TOL);

    let dim = train(&dim_cfg, &RunOutputs::default()).unwrap();
    let tok = train(&tok_cfg, &RunOutputs::default()).unwrap();
    let t = start.elapsed();
    let bound = C10_NLL_FRACTION * (dim.vocab_size as f64).ln();
    let gap = (tok.final_valid_nll - dim.final_valid_nll) / dim.final_valid_nll;
    let nll_ok = dim.final_valid_nll < bound;
    let band_ok = gap.abs() <= C10_BASELINE_BAND;
    Outcome {
        id: 10,
        name: "desk-scale MLM",
        pass: corpus_ok && mask_ok && nll_ok && band_ok && t < C10_BUDGET,
        detail: format!(
            "{} steps, vocab {}: dim valid NLL {:.4} vs bound {bound:.4} [{}]; token {:.4}, relative gap {:+.1}% vs ±{:.0}% [{}]; \
             masking over {} tokens: selected {:.4}, split {m:.4}/{r:.4}/{k:.4} [{}]; {:.0}s (budget {}s)",
            dim_cfg.train.steps,
            dim.vocab_size,
            dim.final_valid_nll,
            if nll_ok { "ok" } else { "miss" },
            tok.final_valid_nll,
            100.0 * gap,
            100.0 * C10_BASELINE_BAND,
            if band_ok { "ok" } else { "miss" },
            stats.eligible,
            stats.selected_fraction(),
            if mask_ok { "ok" } else { "miss" },
            t.as_secs_f64(),
            C10_BUDGET.as_secs()
        ),
    }
}

fn c11() -> Outcome {
    let mut cfg = RunConfig::parse(include_str!("../examples/configs/tiny.cfg")).unwrap();
    cfg.train.steps = 120;
    cfg.dropout = 0.1;
    cfg.checkpoint_interval = 60;
    let root = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut files = 0;
    for family in [AttentionFamily::Dim, AttentionFamily::Token] {
        cfg.attention = family;
        let run = |name: &str| {
            let dir = root.path().join(format!("{family:?}-{name}"));
            train(&cfg, &RunOutputs { ckpt_dir: Some(dir.clone()), ..RunOutputs::default() }).unwrap();
            dir
        };
        let (a, b) = (run("a"), run("b"));
        for name in ["metrics.csv", "run.log", "step_000060.tckpt", "step_000120.tckpt", "final.tckpt"] {
            identical &= std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap();
            files += 1;
        }
    }
    Outcome {
        id: 11,
        name: "determinism",
        pass: identical,
        detail: format!("{files} artifact pairs from repeated seeded runs (with dropout) byte-identical: {identical}"),
    }
}

/// Criteria whose failure has been analysed and recorded as unattainable at
/// this scale. They still print FAIL; they just do not fail the build.
const DOCUMENTED_FAILURES: &[u32] = &[];

fn main() {
    let selected: Option<BTreeSet<u32>> = std::env::var("DIMWISE_ACCEPT")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let all: [(u32, fn() -> Outcome); 11] =
        [(1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9), (10, c10), (11, c11)];
    let mut unexpected = Vec::new();
    let mut documented = Vec::new();
    for (id, run) in all {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let outcome = run();
        report(&outcome);
        if !outcome.pass {
            if DOCUMENTED_FAILURES.contains(&id) {
                documented.push(id);
            } else {
                unexpected.push(id);
            }
        }
    }
    println!("acceptance: unexpected failures {unexpected:?}, documented failures {documented:?}");
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}

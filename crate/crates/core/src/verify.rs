//! Seeded property suites run by `dimwise verify`.
//!
//! Each suite draws its cases from a fixed seed, measures the worst
//! deviation against an independent computation, and compares it with a
//! tolerance. [`run_all`] runs every suite; the CLI prints one line each.

use std::fmt;
use std::time::Instant;

use crate::analysis::{
    count_dim_attention, count_masked_attention, count_token_attention, flops_dim_attention, flops_masked_attention,
    flops_token_attention,
};
use crate::attention::{
    conv_extract, covariance_identity_check, dim_attention_factored, dim_score, explicit_rep, implicit_rep, kr_tensor,
    ConvFilter, NormMode,
};
use crate::error::Result;
use crate::grad::{fd_check_with, ConvMixing, OpKind, Scalarize, FD_STEP, IGNORE};
use crate::harness::{apply_mlm_mask, MaskProbs, MaskStats};
use crate::masked::{masked_output, MaskedMode};
use crate::model::{decode, encode, fd_check_model, AttentionKind, Batch, BlockConfig, Direction, Model};
use crate::numerics::{matmul_nt, rand_uniform, Rng, SoftmaxAxis, Tensor};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// Largest observed deviation (or count mismatch) across cases.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} cases={:<4} worst={:.3e} tol={:.0e} ({:.2}s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance,
            self.seconds
        )
    }
}

fn rand(shape: &[usize], rng: &mut Rng) -> Tensor {
    rand_uniform(shape, -1.0, 1.0, rng)
}

fn size(rng: &mut Rng, max: usize) -> usize {
    1 + rng.below(max as u64) as usize
}

fn timed(name: &'static str, cases: usize, tolerance: f64, body: impl FnOnce() -> Result<f64>) -> Result<SuiteReport> {
    let start = Instant::now();
    let worst = body()?;
    Ok(SuiteReport { name, cases, worst, tolerance, seconds: start.elapsed().as_secs_f64() })
}

/// Factored attention against the materialized score → KR tensor → filter path.
pub fn factored_equivalence(cases: usize, seed: u64) -> Result<SuiteReport> {
    timed("factored_equivalence", cases, 1e-10, || {
        let mut rng = Rng::new(seed);
        let mut worst = 0.0f64;
        for c in 0..cases {
            let (n, d) = (size(&mut rng, 64), size(&mut rng, 16));
            let mode = NormMode::ALL[c % 4];
            let (q, k, v) = (rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[n, d], &mut rng));
            let w = ConvFilter::new(rand(&[d, d], &mut rng))?;
            let fast = dim_attention_factored(&q, &k, &v, &w, mode)?;
            let slow = conv_extract(&kr_tensor(&dim_score(&q, &k)?, &v, mode)?, &w)?;
            worst = worst.max(fast.max_abs_diff(&slow));
        }
        Ok(worst)
    })
}

/// Streaming causal output against the naive masked-score evaluation.
pub fn masked_equivalence(cases: usize, seed: u64) -> Result<SuiteReport> {
    timed("masked_equivalence", cases, 1e-10, || {
        let mut rng = Rng::new(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let (n, d) = (size(&mut rng, 32), size(&mut rng, 8));
            let (q, k, v) = (rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[n, d], &mut rng));
            let w = ConvFilter::new(rand(&[d, d], &mut rng))?;
            let naive = masked_output(&q, &k, &v, &w, MaskedMode::Naive)?;
            let streaming = masked_output(&q, &k, &v, &w, MaskedMode::Streaming)?;
            worst = worst.max(naive.max_abs_diff(&streaming));
        }
        Ok(worst)
    })
}

/// Prefix rows of a causal output are unchanged when a suffix is perturbed.
/// Naive mode must be bit-exact; streaming may differ by 1e-12.
pub fn causality(cases: usize, seed: u64) -> Result<SuiteReport> {
    timed("causality", cases, 1e-12, || {
        let mut rng = Rng::new(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let n = 2 + rng.below(15) as usize;
            let d = size(&mut rng, 6);
            let cut = 1 + rng.below(n as u64 - 1) as usize;
            let (q, k, v) = (rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[n, d], &mut rng));
            let w = ConvFilter::new(rand(&[d, d], &mut rng))?;
            let perturb = |t: &Tensor, rng: &mut Rng| {
                let mut t = t.clone();
                for i in cut..n {
                    for x in t.row_mut(i) {
                        *x += rng.uniform_range(-1.0, 1.0);
                    }
                }
                t
            };
            let (q2, k2, v2) = (perturb(&q, &mut rng), perturb(&k, &mut rng), perturb(&v, &mut rng));
            for mode in [MaskedMode::Naive, MaskedMode::Streaming] {
                let a = masked_output(&q, &k, &v, &w, mode)?;
                let b = masked_output(&q2, &k2, &v2, &w, mode)?;
                for i in 0..cut {
                    for (x, y) in a.row(i).iter().zip(b.row(i)) {
                        let diff = (x - y).abs();
                        // Any naive-mode difference is a failure.
                        worst = worst.max(if mode == MaskedMode::Naive && diff > 0.0 { f64::INFINITY } else { diff });
                    }
                }
            }
        }
        Ok(worst)
    })
}

/// Score matrix of centered input equals the projected Gram matrix.
pub fn covariance_identity(cases: usize, seed: u64) -> Result<SuiteReport> {
    timed("covariance_identity", cases, 1e-10, || {
        let mut rng = Rng::new(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let (n, d, e) = (2 + rng.below(40) as usize, size(&mut rng, 12), size(&mut rng, 12));
            let mut h = rand(&[n, d], &mut rng);
            for j in 0..d {
                let mean = (0..n).map(|i| h.get2(i, j)).sum::<f64>() / n as f64;
                for i in 0..n {
                    h.set2(i, j, h.get2(i, j) - mean);
                }
            }
            let (wq, wk) = (rand(&[d, e], &mut rng), rand(&[d, e], &mut rng));
            worst = worst.max(covariance_identity_check(&h, &wq, &wk)?);
        }
        Ok(worst)
    })
}

/// Explicit and implicit representations and the all-ones filter.
pub fn representations(cases: usize, seed: u64) -> Result<SuiteReport> {
    timed("representations", cases, 1e-12, || {
        let mut rng = Rng::new(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let (n, d) = (size(&mut rng, 20), size(&mut rng, 8));
            let (q, k, v) = (rand(&[n, d], &mut rng), rand(&[n, d], &mut rng), rand(&[n, d], &mut rng));
            let s = dim_score(&q, &k)?;
            let cols = kr_tensor(&s, &v, NormMode::SoftmaxColsOverJ)?;
            worst = worst.max(explicit_rep(&cols)?.max_abs_diff(&v));
            for mode in NormMode::ALL {
                let x = kr_tensor(&s, &v, mode)?;
                let implicit = implicit_rep(&x)?;
                worst = worst.max(implicit.max_abs_diff(&matmul_nt(&v, &mode.apply(&s, n)?)?));
                if conv_extract(&x, &ConvFilter::ones(d))? != implicit {
                    worst = f64::INFINITY;
                }
            }
        }
        Ok(worst)
    })
}

fn op_cases(rng: &mut Rng) -> Vec<(OpKind, Vec<Tensor>)> {
    let mut r = |s: &[usize]| rand(s, rng);
    let away_from_zero = |t: Tensor| t.map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 });
    let mut cases = vec![
        (OpKind::Matmul, vec![r(&[3, 4]), r(&[4, 2])]),
        (OpKind::Linear, vec![r(&[3, 4]), r(&[4, 2]), r(&[2])]),
        (OpKind::Relu, vec![away_from_zero(r(&[3, 4]))]),
        (OpKind::Softmax(SoftmaxAxis::RowsOverK), vec![r(&[3, 4])]),
        (OpKind::Softmax(SoftmaxAxis::ColsOverJ), vec![r(&[3, 4])]),
        (OpKind::LayerNorm, vec![r(&[3, 5]), r(&[5]), r(&[5])]),
        (OpKind::TokenAttention { causal: false }, vec![r(&[4, 3]), r(&[4, 3]), r(&[4, 3])]),
        (OpKind::TokenAttention { causal: true }, vec![r(&[4, 3]), r(&[4, 3]), r(&[4, 3])]),
        (OpKind::Embedding { ids: vec![1, 0, 1], scale: 2.0 }, vec![r(&[3, 4])]),
        (OpKind::CrossEntropy { targets: vec![2, IGNORE, 0] }, vec![r(&[3, 4])]),
    ];
    for mode in NormMode::ALL {
        cases.push((OpKind::DimAttention(mode), vec![r(&[5, 3]), r(&[5, 3]), r(&[5, 3]), r(&[3, 3])]));
    }
    for mode in [MaskedMode::Naive, MaskedMode::Streaming] {
        for scale_positions in [false, true] {
            let op = OpKind::MaskedAttention { mode, scale_positions };
            cases.push((op, vec![r(&[4, 2]), r(&[4, 2]), r(&[4, 2]), r(&[2, 2])]));
        }
    }
    for causal in [false, true] {
        let mut inputs = vec![r(&[4, 4])];
        inputs.extend((0..6).map(|_| r(&[4, 2])));
        inputs.push(r(&[4, 4]));
        cases.push((OpKind::MultiHead { heads: 2, causal }, inputs));
    }
    for mixing in [
        ConvMixing::Global(NormMode::SoftmaxRowsOverK),
        ConvMixing::Causal { mode: MaskedMode::Streaming, scale_positions: false },
    ] {
        let mut inputs = vec![r(&[4, 4])];
        inputs.extend((0..3).map(|_| r(&[4, 2])));
        inputs.extend((0..2).map(|_| r(&[2, 2])));
        inputs.push(r(&[4, 4]));
        cases.push((OpKind::MultiConv { groups: 1, convs: 2, mixing }, inputs));
    }
    cases
}

/// Central differences on every trainable op.
pub fn op_gradients(seed: u64) -> Result<SuiteReport> {
    let mut rng = Rng::new(seed);
    let cases = op_cases(&mut rng);
    timed("op_gradients", cases.len(), 1e-4, || {
        let mut worst = 0.0f64;
        for (i, (op, inputs)) in cases.iter().enumerate() {
            worst = worst.max(fd_check_with(op, inputs, FD_STEP, Scalarize::Weighted(seed + i as u64))?);
        }
        Ok(worst)
    })
}

/// Central differences on every parameter of tiny encoders and decoders.
pub fn model_gradients(seed: u64) -> Result<SuiteReport> {
    timed("model_gradients", 4, 1e-3, || {
        let batch = Batch {
            inputs: vec![vec![5, 2, 3, 2, 1], vec![4, 2, 5]],
            targets: vec![vec![IGNORE, 1, IGNORE, 4, IGNORE], vec![IGNORE, 3, IGNORE]],
        };
        let mut worst = 0.0f64;
        for attention in [AttentionKind::DimMultiConv { groups: 1, convs: 2 }, AttentionKind::TokenMultiHead { heads: 2 }] {
            let mut cfg = BlockConfig::tiny(6);
            cfg.attention = attention;
            cfg.d_model = 4;
            cfg.ffn_width = 6;
            cfg.max_len = 6;
            let model = Model::<f64>::new(cfg, seed)?;
            for dir in [Direction::Bidirectional, Direction::Causal] {
                worst = worst.max(fd_check_model(&model, &batch, dir, FD_STEP)?);
            }
        }
        Ok(worst)
    })
}

/// Analytic counts equal instrumented counts; N-scaling is exact.
pub fn flops_consistency(seed: u64) -> Result<SuiteReport> {
    let shapes = [(1, 1, 1, 1), (5, 3, 2, 2), (9, 4, 3, 1), (16, 8, 2, 4)];
    timed("flops_consistency", shapes.len() * 6, 0.0, || {
        let mut mismatches = 0usize;
        for (n, d, a, b) in shapes {
            for proj in [false, true] {
                mismatches += usize::from(count_token_attention(n, d, a, proj, seed)? != flops_token_attention(n, d, a, proj).counts());
                mismatches += usize::from(count_dim_attention(n, d, a, b, proj, seed)? != flops_dim_attention(n, d, a, b, proj).counts());
            }
            for mode in [MaskedMode::Naive, MaskedMode::Streaming] {
                mismatches += usize::from(count_masked_attention(n, d, mode, seed)? != flops_masked_attention(n, d, mode).counts());
            }
            let dim = |n: usize| flops_dim_attention(n, d, a, b, true).total;
            let intercept = 2 * dim(1) - dim(2);
            mismatches += usize::from(dim(2 * n) - intercept != 2 * (dim(n) - intercept));
            let t1 = flops_token_attention(n, d, a, true);
            let t2 = flops_token_attention(2 * n, d, a, true);
            let scores = |r: &crate::analysis::FlopsReport| r.component("scores").map(|c| c.total());
            mismatches += usize::from(scores(&t2) != scores(&t1).map(|s| 4 * s));
        }
        Ok(mismatches as f64)
    })
}

/// Selection rate and replacement split over `tokens` ordinary tokens.
pub fn masking_statistics(tokens: usize, seed: u64) -> Result<MaskStats> {
    let mut rng = Rng::new(seed);
    let mut stats = MaskStats::default();
    let vocab = 60;
    for chunk in 0..tokens.div_ceil(100) {
        let len = 100.min(tokens - chunk * 100);
        let row: Vec<u32> = (0..len).map(|_| 5 + rng.below(vocab - 5) as u32).collect();
        let masked = apply_mlm_mask(&row, &mut rng, MaskProbs::default(), vocab as usize)?;
        stats.add(&masked, &row);
    }
    Ok(stats)
}

/// Masking rates within 1% (selection) and 2% (split) of their targets.
pub fn masking(seed: u64) -> Result<SuiteReport> {
    timed("masking_statistics", 100_000, 1.0, || {
        let s = masking_statistics(100_000, seed)?;
        let (m, r, k) = s.split();
        // Normalized so that 1.0 is exactly at the tolerance edge.
        let worst = [
            (s.selected_fraction() - 0.15).abs() / 0.01,
            (m - 0.8).abs() / 0.02,
            (r - 0.1).abs() / 0.02,
            (k - 0.1).abs() / 0.02,
        ];
        Ok(worst.into_iter().fold(0.0, f64::max))
    })
}

/// Checkpoint encode → decode → encode is byte-identical.
pub fn checkpoint_round_trip(seed: u64) -> Result<SuiteReport> {
    timed("checkpoint_round_trip", 2, 0.0, || {
        let mut bad = 0usize;
        for attention in [AttentionKind::DimMultiConv { groups: 2, convs: 1 }, AttentionKind::TokenMultiHead { heads: 2 }] {
            let mut cfg = BlockConfig::tiny(9);
            cfg.attention = attention;
            let model = Model::<f64>::new(cfg, seed)?;
            let bytes = encode(&model, 1, "")?;
            let (back, _) = decode::<f64>(&bytes)?;
            bad += usize::from(back.params != model.params || encode(&back, 1, "")? != bytes);
        }
        Ok(bad as f64)
    })
}

/// Every suite. `quick` shrinks case counts for a fast smoke run.
pub fn run_all(quick: bool, seed: u64) -> Result<Vec<SuiteReport>> {
    let scale = |full: usize| if quick { full.div_ceil(5) } else { full };
    Ok(vec![
        factored_equivalence(scale(200), seed)?,
        masked_equivalence(scale(100), seed)?,
        causality(scale(50), seed)?,
        covariance_identity(scale(50), seed)?,
        representations(scale(50), seed)?,
        op_gradients(seed)?,
        model_gradients(seed)?,
        flops_consistency(seed)?,
        masking(seed)?,
        checkpoint_round_trip(seed)?,
    ])
}

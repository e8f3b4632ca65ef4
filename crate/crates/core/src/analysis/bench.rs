//! Wall-clock scaling sweeps.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use super::flops::{flops_dim_attention, flops_masked_attention, flops_token_attention};
use crate::attention::{dim_attention_factored, token_attention, ConvFilter, NormMode};
use crate::error::{Error, Result};
use crate::masked::{masked_output, MaskedMode};
use crate::numerics::{rand_uniform, Rng, Tensor};

/// Attention core timed by [`bench_sweep`] on given `Q, K, V` (no projections).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchVariant {
    /// Single-head scaled dot-product attention.
    Token,
    /// Single-filter factored dimension-wise attention, row softmax.
    Dim,
    MaskedNaive,
    MaskedStreaming,
}

impl BenchVariant {
    pub const ALL: [BenchVariant; 4] =
        [BenchVariant::Token, BenchVariant::Dim, BenchVariant::MaskedNaive, BenchVariant::MaskedStreaming];

    pub fn name(self) -> &'static str {
        match self {
            BenchVariant::Token => "token",
            BenchVariant::Dim => "dim",
            BenchVariant::MaskedNaive => "masked_naive",
            BenchVariant::MaskedStreaming => "masked_streaming",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// `(groups, convs)` as written to the CSV.
    fn shape(self) -> (usize, usize) {
        match self {
            BenchVariant::Token => (1, 0),
            _ => (1, 1),
        }
    }

    fn flops(self, n: usize, d: usize) -> u64 {
        match self {
            BenchVariant::Token => flops_token_attention(n, d, 1, false).total,
            BenchVariant::Dim => flops_dim_attention(n, d, 1, 1, false).total,
            BenchVariant::MaskedNaive => flops_masked_attention(n, d, MaskedMode::Naive).total,
            BenchVariant::MaskedStreaming => flops_masked_attention(n, d, MaskedMode::Streaming).total,
        }
    }

    fn run(self, q: &Tensor, k: &Tensor, v: &Tensor, w: &ConvFilter) -> Result<Tensor> {
        match self {
            BenchVariant::Token => token_attention(q, k, v),
            BenchVariant::Dim => dim_attention_factored(q, k, v, w, NormMode::SoftmaxRowsOverK),
            BenchVariant::MaskedNaive => masked_output(q, k, v, w, MaskedMode::Naive),
            BenchVariant::MaskedStreaming => masked_output(q, k, v, w, MaskedMode::Streaming),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: BenchVariant,
    pub n: usize,
    pub d: usize,
    pub groups: usize,
    pub convs: usize,
    pub median_seconds: f64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const CSV_HEADER: &str = "variant,N,d,groups,convs,median_seconds,flops";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.9},{}",
                r.variant.name(),
                r.n,
                r.d,
                r.groups,
                r.convs,
                r.median_seconds,
                r.flops
            );
        }
        out
    }

    /// Rows of one variant at width `d`, by increasing `N`.
    pub fn series(&self, variant: BenchVariant, d: usize) -> Vec<&SweepRow> {
        let mut rows: Vec<_> = self.rows.iter().filter(|r| r.variant == variant && r.d == d).collect();
        rows.sort_by_key(|r| r.n);
        rows
    }

    /// `time(N_{i+1}) / time(N_i)` along [`SweepResult::series`].
    pub fn time_ratios(&self, variant: BenchVariant, d: usize) -> Vec<f64> {
        self.series(variant, d)
            .windows(2)
            .map(|w| w[1].median_seconds / w[0].median_seconds)
            .collect()
    }

    /// Whether time is nondecreasing in `N` for every variant and width.
    pub fn is_monotone(&self) -> bool {
        self.rows.iter().all(|r| {
            self.series(r.variant, r.d)
                .windows(2)
                .all(|w| w[1].median_seconds >= w[0].median_seconds)
        })
    }
}

/// Smallest sample the timer should see; shorter calls are repeated.
const MIN_SAMPLE_SECONDS: f64 = 2e-3;

/// Median wall-clock time of each variant at each `(N, d)`, over `repeats`
/// samples after one discarded warmup call.
///
/// All variants see the same random inputs for a given `(N, d)`. Rows come
/// out ordered by variant, then `d`, then `N`, in the order given.
pub fn bench_sweep(variants: &[BenchVariant], ns: &[usize], ds: &[usize], repeats: usize, seed: u64) -> Result<SweepResult> {
    if repeats < 5 {
        return Err(Error::precondition("bench_sweep", format!("need at least 5 repeats, got {repeats}")));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        for &d in ds {
            for &n in ns {
                let mut rng = Rng::fork(seed, n as u64, d as u64);
                let q: Tensor = rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
                let k: Tensor = rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
                let v: Tensor = rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
                let w = ConvFilter::new(rand_uniform(&[d, d], 0.5, 1.5, &mut rng))?;

                let start = Instant::now();
                black_box(variant.run(&q, &k, &v, &w)?);
                let warm = start.elapsed().as_secs_f64();
                let inner = ((MIN_SAMPLE_SECONDS / warm.max(1e-9)).ceil() as usize).clamp(1, 10_000);

                let mut samples = Vec::with_capacity(repeats);
                for _ in 0..repeats {
                    let start = Instant::now();
                    for _ in 0..inner {
                        black_box(variant.run(black_box(&q), &k, &v, &w)?);
                    }
                    samples.push(start.elapsed().as_secs_f64() / inner as f64);
                }
                samples.sort_by(f64::total_cmp);
                let (groups, convs) = variant.shape();
                rows.push(SweepRow {
                    variant,
                    n,
                    d,
                    groups,
                    convs,
                    median_seconds: samples[repeats / 2],
                    flops: variant.flops(n, d),
                });
            }
        }
    }
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_csv_shape() {
        let r = bench_sweep(&[BenchVariant::Dim, BenchVariant::Token], &[8, 16], &[4], 5, 1).unwrap();
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("dim,8,4,1,1,"));
        assert!(lines[3].starts_with("token,8,4,1,0,"));
        assert_eq!(r.time_ratios(BenchVariant::Dim, 4).len(), 1);
    }

    #[test]
    fn rejects_few_repeats() {
        assert!(bench_sweep(&[BenchVariant::Dim], &[4], &[2], 4, 0).is_err());
    }
}

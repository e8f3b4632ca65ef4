//! Instrumented counts: the real kernels run on [`Counted`] scalars.

use crate::attention::{
    dim_score, filtered_values, multi_conv_block, multi_head_attention, token_attention, ConvFilter,
    MultiConvParams, NormMode, TokenAttnParams,
};
use crate::error::Result;
use crate::masked::{masked_output, MaskedMode};
use crate::numerics::{measure, rand_uniform, Counted, OpCounts, Rng, Tensor};

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<Counted> {
    rand_uniform(shape, -1.0, 1.0, rng)
}

fn filter(d: usize, rng: &mut Rng) -> Result<ConvFilter<Counted>> {
    ConvFilter::new(random(&[d, d], rng))
}

/// Operations performed by [`token_attention`] per head, or by
/// [`multi_head_attention`] when `projections` is set.
pub fn count_token_attention(n: usize, d: usize, heads: usize, projections: bool, seed: u64) -> Result<OpCounts> {
    let mut rng = Rng::new(seed);
    if projections {
        let dm = heads * d;
        let x = random(&[n, dm], &mut rng);
        let mut ws = |count: usize| (0..count).map(|_| random(&[dm, d], &mut rng)).collect::<Vec<_>>();
        let (wq, wk, wv) = (ws(heads), ws(heads), ws(heads));
        let params = TokenAttnParams { wq, wk, wv, wo: random(&[heads * d, dm], &mut rng) };
        let (out, counts) = measure(|| multi_head_attention(&x, &params, false));
        out?;
        return Ok(counts);
    }
    let inputs: Vec<[Tensor<Counted>; 3]> = (0..heads)
        .map(|_| [random(&[n, d], &mut rng), random(&[n, d], &mut rng), random(&[n, d], &mut rng)])
        .collect();
    let (out, counts) = measure(|| {
        inputs
            .iter()
            .map(|[q, k, v]| token_attention(q, k, v))
            .collect::<Result<Vec<_>>>()
    });
    out?;
    Ok(counts)
}

/// Operations performed by the factored multi-conv path, with or without
/// its projections.
pub fn count_dim_attention(
    n: usize,
    d: usize,
    groups: usize,
    convs: usize,
    projections: bool,
    seed: u64,
) -> Result<OpCounts> {
    let mut rng = Rng::new(seed);
    let f = NormMode::SoftmaxRowsOverK;
    if projections {
        let dm = groups * convs * d;
        let x = random(&[n, dm], &mut rng);
        let mut ws = |count: usize| (0..count).map(|_| random(&[dm, d], &mut rng)).collect::<Vec<_>>();
        let (wq, wk, wv) = (ws(groups), ws(groups), ws(groups));
        let filters = (0..groups)
            .map(|_| (0..convs).map(|_| filter(d, &mut rng)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let wo = random(&[groups * convs * d, dm], &mut rng);
        let params = MultiConvParams { wq, wk, wv, filters, wo };
        let (out, counts) = measure(|| multi_conv_block(&x, &params, f));
        out?;
        return Ok(counts);
    }
    let mut inputs = Vec::with_capacity(groups);
    for _ in 0..groups {
        let qkv = [random(&[n, d], &mut rng), random(&[n, d], &mut rng), random(&[n, d], &mut rng)];
        let fs = (0..convs).map(|_| filter(d, &mut rng)).collect::<Result<Vec<_>>>()?;
        inputs.push((qkv, fs));
    }
    let (out, counts) = measure(|| -> Result<()> {
        for ([q, k, v], filters) in &inputs {
            let fs = f.apply(&dim_score(q, k)?, n)?;
            for w in filters {
                filtered_values(v, &fs, w)?;
            }
        }
        Ok(())
    });
    out?;
    Ok(counts)
}

/// Operations performed by one causal filter output in `mode`.
pub fn count_masked_attention(n: usize, d: usize, mode: MaskedMode, seed: u64) -> Result<OpCounts> {
    let mut rng = Rng::new(seed);
    let (q, k, v) = (random(&[n, d], &mut rng), random(&[n, d], &mut rng), random(&[n, d], &mut rng));
    let w = filter(d, &mut rng)?;
    let (out, counts) = measure(|| masked_output(&q, &k, &v, &w, mode));
    out?;
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::super::flops::*;
    use super::*;

    #[test]
    fn analytic_equals_instrumented() {
        for (n, d, a, b) in [(1, 1, 1, 1), (5, 3, 2, 2), (7, 4, 3, 1)] {
            for proj in [false, true] {
                assert_eq!(count_token_attention(n, d, a, proj, 1).unwrap(), flops_token_attention(n, d, a, proj).counts());
                assert_eq!(count_dim_attention(n, d, a, b, proj, 1).unwrap(), flops_dim_attention(n, d, a, b, proj).counts());
            }
            for mode in [MaskedMode::Naive, MaskedMode::Streaming] {
                assert_eq!(count_masked_attention(n, d, mode, 1).unwrap(), flops_masked_attention(n, d, mode).counts());
            }
        }
    }
}

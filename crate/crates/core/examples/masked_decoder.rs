//! Causal dimension-wise attention: the streaming prefix-state evaluation
//! against explicit masked loops, and a check that the future stays invisible.

use std::time::Instant;

use dimwise::attention::ConvFilter;
use dimwise::masked::{masked_output, MaskedMode};
use dimwise::numerics::{rand_uniform, Rng, Tensor};

fn main() -> dimwise::Result<()> {
    let (n, d) = (32, 8);
    let mut rng = Rng::new(3);
    let mut rand = |shape: &[usize]| -> Tensor { rand_uniform(shape, -1.0, 1.0, &mut rng) };
    let (q, k, v) = (rand(&[n, d]), rand(&[n, d]), rand(&[n, d]));
    let w = ConvFilter::new(rand(&[d, d]))?;

    let t = Instant::now();
    let naive = masked_output(&q, &k, &v, &w, MaskedMode::Naive)?;
    let naive_time = t.elapsed();
    let t = Instant::now();
    let streaming = masked_output(&q, &k, &v, &w, MaskedMode::Streaming)?;
    let streaming_time = t.elapsed();
    println!("naive {naive_time:?}, streaming {streaming_time:?}, max diff {:.2e}", naive.max_abs_diff(&streaming));

    // Changing the last token must not move any earlier output row.
    let mut v2 = v.clone();
    v2.row_mut(n - 1).iter_mut().for_each(|x| *x += 10.0);
    let moved = masked_output(&q, &k, &v2, &w, MaskedMode::Streaming)?;
    let prefix_change = (0..n - 1)
        .flat_map(|i| streaming.row(i).iter().zip(moved.row(i)).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    println!("largest change in rows 0..{}: {prefix_change:e}", n - 1);
    Ok(())
}

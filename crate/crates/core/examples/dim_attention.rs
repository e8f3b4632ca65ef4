//! Dimension-wise attention on a random sequence: the factored kernel against
//! the materialized Khatri-Rao tensor, and the two representations it sums to.

use dimwise::attention::{
    conv_extract, dim_attention_factored, dim_score, explicit_rep, implicit_rep, kr_tensor, ConvFilter, NormMode,
};
use dimwise::numerics::{rand_uniform, Rng, Tensor};

fn main() -> dimwise::Result<()> {
    let (n, d) = (48, 12);
    let mut rng = Rng::new(7);
    let q: Tensor = rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
    let k: Tensor = rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
    let v: Tensor = rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
    let w = ConvFilter::new(rand_uniform(&[d, d], 0.5, 1.5, &mut rng))?;

    let s = dim_score(&q, &k)?;
    println!("score matrix is {}x{} for {n} tokens", s.rows(), s.cols());
    for mode in NormMode::ALL {
        let fast = dim_attention_factored(&q, &k, &v, &w, mode)?;
        let x = kr_tensor(&s, &v, mode)?;
        let slow = conv_extract(&x, &w)?;
        println!("{:<20} factored vs materialized: {:.2e}", mode.name(), fast.max_abs_diff(&slow));
    }

    let x = kr_tensor(&s, &v, NormMode::SoftmaxColsOverJ)?;
    println!("explicit representation vs V:  {:.2e}", explicit_rep(&x)?.max_abs_diff(&v));
    let ones = conv_extract(&x, &ConvFilter::ones(d))?;
    println!("all-ones filter vs implicit:   {:.2e}", ones.max_abs_diff(&implicit_rep(&x)?));
    Ok(())
}

//! Records single ops on the tape, runs their backward rules and compares
//! against central finite differences.

use dimwise::attention::NormMode;
use dimwise::grad::{fd_check_with, OpKind, Scalarize, TapeNode, FD_STEP};
use dimwise::numerics::{rand_uniform, Rng, Tensor};

fn main() -> dimwise::Result<()> {
    let mut rng = Rng::new(11);
    let mut rand = |shape: &[usize]| -> Tensor { rand_uniform(shape, -1.0, 1.0, &mut rng) };

    let (q, k, v, w) = (rand(&[6, 4]), rand(&[6, 4]), rand(&[6, 4]), rand(&[4, 4]));
    let (out, node) = TapeNode::record(OpKind::from_name("dim_attention")?, vec![q, k, v, w])?;
    let grads = node.backward(&Tensor::filled(out.shape(), 1.0))?;
    for (name, g) in ["dQ", "dK", "dV", "dW"].iter().zip(grads.iter()) {
        println!("{name}: shape {:?}, |g|max {:.3}", g.shape(), g.max_abs());
    }

    for name in ["matmul", "layer_norm", "token_attention", "masked_attention"] {
        let op = OpKind::from_name(name)?;
        let inputs = match name {
            "matmul" => vec![rand(&[3, 5]), rand(&[5, 2])],
            "layer_norm" => vec![rand(&[3, 6]), rand(&[6]), rand(&[6])],
            "token_attention" => vec![rand(&[5, 3]), rand(&[5, 3]), rand(&[5, 3])],
            _ => vec![rand(&[5, 3]), rand(&[5, 3]), rand(&[5, 3]), rand(&[3, 3])],
        };
        let err = fd_check_with(&op, &inputs, FD_STEP, Scalarize::Weighted(1))?;
        println!("{name:<18} max relative error {err:.2e}");
    }
    for mode in NormMode::ALL {
        let inputs = vec![rand(&[5, 3]), rand(&[5, 3]), rand(&[5, 3]), rand(&[3, 3])];
        let err = fd_check_with(&OpKind::DimAttention(mode), &inputs, FD_STEP, Scalarize::Weighted(2))?;
        println!("dim_attention:{:<20} {err:.2e}", mode.name());
    }
    Ok(())
}

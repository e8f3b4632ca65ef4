//! Transformer-style blocks around either attention family, their losses,
//! the optimizer, and checkpoints.
//!
//! A block is post-layer-norm: `y = LN(x + Drop(Attn(x)))`, then
//! `out = LN(y + Drop(FFN(y)))` with a ReLU FFN. Token embeddings are scaled
//! by `√d_model` and summed with sinusoidal (or learned) positions; the output
//! head reuses the embedding matrix plus a bias.

mod checkpoint;
mod config;
mod forward;
mod optim;
mod params;

pub use checkpoint::{decode, encode, load, read_manifest, save, Manifest, TensorEntry, FORMAT_VERSION, MAGIC};
pub use config::{AttentionKind, BlockConfig, PositionKind, TrainConfig};
pub use forward::{decoder_forward, encoder_forward, evaluate, loss_and_grads, mlm_loss, Batch, Direction, ForwardCache, Model, Pass};
pub use optim::{learning_rate, train_step, Adam};
pub use params::{sinusoidal_positions, AttnParams, FfnParams, LayerParams, ModelParams};

use crate::error::{Error, Result};
use crate::grad::relative_error;
use crate::numerics::Precision;

/// Max relative error between the analytic gradient of the batch loss and
/// central differences with step `h`, over every parameter coordinate.
pub fn fd_check_model(model: &Model<f64>, batch: &Batch, direction: Direction, h: f64) -> Result<f64> {
    if model.config().precision != Precision::F64 {
        return Err(Error::Precision { op: "fd_check_model" });
    }
    let (_, grads) = loss_and_grads(model, batch, direction, None)?;
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut flat = 0;
    let slots = probe.params.tensors().len();
    for s in 0..slots {
        let len = probe.params.tensors()[s].len();
        for e in 0..len {
            let orig = probe.params.tensors()[s].data()[e];
            let (up, down) = (orig + h, orig - h);
            probe.params.tensors_mut()[s].data_mut()[e] = up;
            let plus = loss_and_grads(&probe, batch, direction, None)?.0;
            probe.params.tensors_mut()[s].data_mut()[e] = down;
            let minus = loss_and_grads(&probe, batch, direction, None)?.0;
            probe.params.tensors_mut()[s].data_mut()[e] = orig;
            worst = worst.max(relative_error(analytic[flat], (plus - minus) / (up - down)));
            flat += 1;
        }
    }
    Ok(worst)
}

use super::config::TrainConfig;
use super::forward::{loss_and_grads, Batch, Direction, Model};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::Real;

/// Learning rate at 1-based `step`: linear warmup to `lr` over `warmup`
/// steps, then inverse-square-root decay. `lr·min(t/w, √(w/t))`.
pub fn learning_rate(config: &TrainConfig, step: usize) -> f64 {
    let t = step.max(1) as f64;
    if config.warmup == 0 {
        return config.lr;
    }
    let w = config.warmup as f64;
    config.lr * (t / w).min((w / t).sqrt())
}

/// Adam moments, kept in the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T = f64> {
    m: ModelParams<T>,
    v: ModelParams<T>,
    step: usize,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Clips `grads` to global norm `clip_norm`, then applies one update.
    /// Returns the pre-clip gradient norm.
    pub fn update(&mut self, params: &mut ModelParams<T>, grads: &mut ModelParams<T>, config: &TrainConfig) -> f64 {
        self.step += 1;
        let norm = grads.tensors().iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
        if config.clip_norm > 0.0 && norm > config.clip_norm {
            let s = T::from_f64(config.clip_norm / norm);
            for g in grads.tensors_mut() {
                g.scale_in_place(s);
            }
        }
        let lr = learning_rate(config, self.step);
        let t = self.step as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        let (b1, b2) = (T::from_f64(config.beta1), T::from_f64(config.beta2));
        let (ob1, ob2) = (T::from_f64(1.0 - config.beta1), T::from_f64(1.0 - config.beta2));
        let step_size = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(config.eps);
        let moments = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for ((p, g), (m, v)) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(moments) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((pv, &gv), (mv, vv)) in it {
                *mv = b1 * *mv + ob1 * gv;
                *vv = b2 * *vv + ob2 * gv * gv;
                *pv -= step_size * *mv / ((*vv * inv_c2).sqrt() + eps);
            }
        }
        norm
    }
}

/// One optimization step: forward and backward over `batch`, clip, Adam.
///
/// Dropout draws come from `(config.seed, step)`, so a run is reproducible
/// from its seed. Returns the batch loss before the update.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    optimizer: &mut Adam<T>,
    batch: &Batch,
    direction: Direction,
    config: &TrainConfig,
) -> Result<f64> {
    let step = optimizer.step() + 1;
    let (loss, mut grads) = loss_and_grads(model, batch, direction, Some((config.seed, step as u64)))?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, loss });
    }
    optimizer.update(&mut model.params, &mut grads, config);
    if !model.params.is_finite() {
        return Err(Error::NonFiniteLoss { step, loss: f64::NAN });
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_warmup() {
        let cfg = TrainConfig { lr: 1.0, warmup: 400, ..TrainConfig::default() };
        assert_eq!(learning_rate(&cfg, 200), 0.5);
        assert_eq!(learning_rate(&cfg, 400), 1.0);
        assert_eq!(learning_rate(&cfg, 1600), 0.5);
    }
}

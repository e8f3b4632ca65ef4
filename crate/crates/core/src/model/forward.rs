use super::config::BlockConfig;
use super::params::{sinusoidal_positions, AttnParams, ModelParams};
use crate::error::{Error, Result};
use crate::grad::{
    cross_entropy, embedding, embedding_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    multi_conv_backward, multi_conv_forward, multi_head_backward, multi_head_forward, relu,
    relu_backward, ConvMixing, LayerNormCache, MultiConvCache, MultiHeadCache, IGNORE,
};
use crate::numerics::{matmul, matmul_nt, matmul_tn, Real, Rng, Tensor};

const TAG_DROPOUT: u64 = 5;

/// Whether position `i` may attend to positions after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Encoder: every position sees the whole sequence.
    Bidirectional,
    /// Decoder: position `i` sees only positions `≤ i`.
    Causal,
}

/// Per-call switches of a forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pass {
    /// Dropout stream `(seed, counter)`; `None` disables dropout.
    pub dropout: Option<(u64, u64)>,
    /// Replace every attention sublayer output by zeros.
    pub zero_attention: bool,
}

/// A parameter set together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f64> {
    config: BlockConfig,
    pub params: ModelParams<T>,
    sinusoid: Tensor<T>,
}

enum AttnCache<T> {
    Token(MultiHeadCache<T>),
    Dim(MultiConvCache<T>),
    Zeroed,
}

struct LayerCache<T> {
    attn: AttnCache<T>,
    drop1: Option<Tensor<T>>,
    ln1: LayerNormCache<T>,
    y: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
    drop2: Option<Tensor<T>>,
    ln2: LayerNormCache<T>,
}

/// Saved activations of one sequence, consumed by [`Model::backward`].
pub struct ForwardCache<T = f64> {
    ids: Vec<u32>,
    direction: Direction,
    layers: Vec<LayerCache<T>>,
    top: Tensor<T>,
}

/// Inverted dropout: keeps each entry with probability `1 − p`, scaled by
/// `1/(1 − p)`. Returns the mask it applied.
fn dropout<T: Real>(x: &mut Tensor<T>, p: f64, rng: &mut Rng) -> Tensor<T> {
    let keep = T::from_f64(1.0 / (1.0 - p));
    let mut mask = Tensor::zeros(x.shape());
    for (m, v) in mask.data_mut().iter_mut().zip(x.data_mut()) {
        if rng.uniform() >= p {
            *m = keep;
            *v *= keep;
        } else {
            *v = T::zero();
        }
    }
    mask
}

impl<T: Real> Model<T> {
    pub fn new(config: BlockConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: BlockConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        if params.embedding.shape() != [config.vocab_size, config.d_model] || params.layers.len() != config.layers {
            return Err(Error::precondition("model", "parameters do not match the configuration"));
        }
        let sinusoid = sinusoidal_positions(config.max_len, config.d_model);
        Ok(Model { config, params, sinusoid })
    }

    pub fn config(&self) -> &BlockConfig {
        &self.config
    }

    fn embed(&self, ids: &[u32]) -> Result<Tensor<T>> {
        if ids.len() > self.config.max_len {
            return Err(Error::SequenceTooLong { len: ids.len(), max: self.config.max_len });
        }
        let scale = T::from_f64((self.config.d_model as f64).sqrt());
        let mut x = embedding(&self.params.embedding, ids, scale)?;
        let table = self.params.positions.as_ref().unwrap_or(&self.sinusoid);
        for t in 0..ids.len() {
            for (v, &p) in x.row_mut(t).iter_mut().zip(table.row(t)) {
                *v += p;
            }
        }
        Ok(x)
    }

    fn mixing(&self) -> ConvMixing {
        ConvMixing::Causal { mode: self.config.masked_mode, scale_positions: self.config.scale_positions }
    }

    /// Logits for one sequence with saved activations.
    pub fn forward(&self, ids: &[u32], direction: Direction, pass: Pass) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let mut x = self.embed(ids)?;
        let p_drop = if pass.dropout.is_some() { self.config.dropout } else { 0.0 };
        let mut rng = pass.dropout.map(|(seed, counter)| Rng::fork(seed, TAG_DROPOUT, counter));
        let mut layers = Vec::with_capacity(self.params.layers.len());
        for layer in &self.params.layers {
            let (mut a, attn) = if pass.zero_attention {
                (Tensor::zeros(x.shape()), AttnCache::Zeroed)
            } else {
                match (&layer.attn, direction) {
                    (AttnParams::Token(p), _) => {
                        let (a, c) = multi_head_forward(&x, p, direction == Direction::Causal)?;
                        (a, AttnCache::Token(c))
                    }
                    (AttnParams::Dim(p), Direction::Bidirectional) => {
                        let (a, c) = multi_conv_forward(&x, p, ConvMixing::Global(self.config.norm))?;
                        (a, AttnCache::Dim(c))
                    }
                    (AttnParams::Dim(p), Direction::Causal) => {
                        let (a, c) = multi_conv_forward(&x, p, self.mixing())?;
                        (a, AttnCache::Dim(c))
                    }
                }
            };
            let drop1 = match rng.as_mut() {
                Some(r) if p_drop > 0.0 => Some(dropout(&mut a, p_drop, r)),
                _ => None,
            };
            let (y, ln1) = layer_norm(&x.add(&a)?, &layer.ln1_gamma, &layer.ln1_beta)?;
            let pre = linear(&y, &layer.ffn.w1, &layer.ffn.b1)?;
            let act = relu(&pre);
            let mut f = linear(&act, &layer.ffn.w2, &layer.ffn.b2)?;
            let drop2 = match rng.as_mut() {
                Some(r) if p_drop > 0.0 => Some(dropout(&mut f, p_drop, r)),
                _ => None,
            };
            let (out, ln2) = layer_norm(&y.add(&f)?, &layer.ln2_gamma, &layer.ln2_beta)?;
            layers.push(LayerCache { attn, drop1, ln1, y, pre, act, drop2, ln2 });
            x = out;
        }
        let mut logits = matmul_nt(&x, &self.params.embedding)?;
        for t in 0..logits.rows() {
            for (l, &b) in logits.row_mut(t).iter_mut().zip(self.params.out_bias.data()) {
                *l += b;
            }
        }
        let cache = ForwardCache { ids: ids.to_vec(), direction, layers, top: x };
        Ok((logits, cache))
    }

    /// Logits without dropout or saved state.
    pub fn logits(&self, ids: &[u32], direction: Direction) -> Result<Tensor<T>> {
        Ok(self.forward(ids, direction, Pass::default())?.0)
    }

    /// Accumulates `∂L/∂params` into `grads` given `∂L/∂logits`.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Tensor<T>, grads: &mut ModelParams<T>) -> Result<()> {
        // logits = top·Eᵀ + b
        let mut dx = matmul(dlogits, &self.params.embedding)?;
        grads.embedding.add_assign(&matmul_tn(dlogits, &cache.top)?)?;
        grads.out_bias.add_assign(&dlogits.col_sums())?;
        for (l, (layer, lc)) in self.params.layers.iter().zip(&cache.layers).enumerate().rev() {
            let g = &mut grads.layers[l];
            let (dsum2, dg2, db2) = layer_norm_backward(&lc.ln2, &layer.ln2_gamma, &dx)?;
            g.ln2_gamma.add_assign(&dg2)?;
            g.ln2_beta.add_assign(&db2)?;
            let mut df = dsum2.clone();
            if let Some(m) = &lc.drop2 {
                df = df.hadamard(m)?;
            }
            let (dact, dw2, dbias2) = linear_backward(&lc.act, &layer.ffn.w2, &df)?;
            g.ffn.w2.add_assign(&dw2)?;
            g.ffn.b2.add_assign(&dbias2)?;
            let dpre = relu_backward(&lc.pre, &dact)?;
            let (dy_ffn, dw1, dbias1) = linear_backward(&lc.y, &layer.ffn.w1, &dpre)?;
            g.ffn.w1.add_assign(&dw1)?;
            g.ffn.b1.add_assign(&dbias1)?;
            let dy = dsum2.add(&dy_ffn)?;
            let (dsum1, dg1, db1) = layer_norm_backward(&lc.ln1, &layer.ln1_gamma, &dy)?;
            g.ln1_gamma.add_assign(&dg1)?;
            g.ln1_beta.add_assign(&db1)?;
            let mut da = dsum1.clone();
            if let Some(m) = &lc.drop1 {
                da = da.hadamard(m)?;
            }
            dx = dsum1;
            let dx_attn = match (&lc.attn, &layer.attn, &mut g.attn) {
                (AttnCache::Zeroed, ..) => None,
                (AttnCache::Token(c), AttnParams::Token(p), AttnParams::Token(gp)) => {
                    Some(multi_head_backward(p, c, &da, gp)?)
                }
                (AttnCache::Dim(c), AttnParams::Dim(p), AttnParams::Dim(gp)) => {
                    let mixing = match cache.direction {
                        Direction::Bidirectional => ConvMixing::Global(self.config.norm),
                        Direction::Causal => self.mixing(),
                    };
                    Some(multi_conv_backward(p, c, mixing, &da, gp)?)
                }
                _ => return Err(Error::precondition("backward", "attention cache does not match parameters")),
            };
            if let Some(d) = dx_attn {
                dx.add_assign(&d)?;
            }
        }
        let scale = T::from_f64((self.config.d_model as f64).sqrt());
        embedding_backward(&mut grads.embedding, &cache.ids, &dx, scale)?;
        if let Some(gp) = &mut grads.positions {
            for t in 0..cache.ids.len() {
                for (g, &d) in gp.row_mut(t).iter_mut().zip(dx.row(t)) {
                    *g += d;
                }
            }
        }
        Ok(())
    }
}

/// Encoder logits `[N × vocab]`: embedding and positions, `L` bidirectional
/// blocks, tied output head.
pub fn encoder_forward<T: Real>(tokens: &[u32], model: &Model<T>) -> Result<Tensor<T>> {
    model.logits(tokens, Direction::Bidirectional)
}

/// Decoder logits `[N × vocab]`; row `i` depends only on `tokens[..=i]`.
pub fn decoder_forward<T: Real>(tokens: &[u32], model: &Model<T>) -> Result<Tensor<T>> {
    model.logits(tokens, Direction::Causal)
}

/// Mean `−log softmax(logits[p])[targets[p]]` over `mask_positions`.
pub fn mlm_loss<T: Real>(logits: &Tensor<T>, targets: &[u32], mask_positions: &[usize]) -> Result<f64> {
    if mask_positions.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut scored = vec![IGNORE; logits.rows()];
    for &p in mask_positions {
        let t = *targets
            .get(p)
            .ok_or_else(|| Error::precondition("mlm_loss", format!("mask position {p} out of range")))?;
        *scored
            .get_mut(p)
            .ok_or_else(|| Error::precondition("mlm_loss", format!("mask position {p} out of range")))? = t;
    }
    let ce = cross_entropy(logits, &scored)?;
    Ok(ce.nll_sum / ce.count as f64)
}

/// Sequences with per-position targets; [`IGNORE`] targets are not scored.
///
/// Every row holds only real tokens: padding is trimmed before batching.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
}

impl Batch {
    pub fn scored(&self) -> usize {
        self.targets.iter().flatten().filter(|&&t| t != IGNORE).count()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Mean NLL over every scored position of the batch and its gradient.
///
/// Items are processed in order and their gradients summed in that order, so
/// the result is deterministic.
pub fn loss_and_grads<T: Real>(
    model: &Model<T>,
    batch: &Batch,
    direction: Direction,
    dropout: Option<(u64, u64)>,
) -> Result<(f64, ModelParams<T>)> {
    let total = batch.scored();
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    let inv = T::from_f64(1.0 / total as f64);
    let mut grads = model.params.zeros_like();
    let mut nll = 0.0;
    for (i, (ids, targets)) in batch.inputs.iter().zip(&batch.targets).enumerate() {
        let pass = Pass {
            dropout: dropout.map(|(seed, c)| (seed, c.wrapping_mul(1 << 16).wrapping_add(i as u64))),
            zero_attention: false,
        };
        let (logits, cache) = model.forward(ids, direction, pass)?;
        let ce = cross_entropy(&logits, targets)?;
        if ce.count == 0 {
            continue;
        }
        nll += ce.nll_sum;
        model.backward(&cache, &ce.dlogits.scale(inv), &mut grads)?;
    }
    Ok((nll / total as f64, grads))
}

/// Mean NLL over the scored positions of `batches`, without dropout.
pub fn evaluate<T: Real>(model: &Model<T>, batches: &[Batch], direction: Direction) -> Result<f64> {
    let mut nll = 0.0;
    let mut count = 0;
    for batch in batches {
        for (ids, targets) in batch.inputs.iter().zip(&batch.targets) {
            let ce = cross_entropy(&model.logits(ids, direction)?, targets)?;
            nll += ce.nll_sum;
            count += ce.count;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(nll / count as f64)
}

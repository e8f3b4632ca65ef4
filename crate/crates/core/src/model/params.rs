use super::config::{AttentionKind, BlockConfig, PositionKind};
use crate::attention::{ConvFilter, MultiConvParams, TokenAttnParams};
use crate::error::Result;
use crate::numerics::{rand_init, rand_uniform, Init, Real, Rng, Tensor};

/// Stream tags for [`Rng::fork`], one per parameter family. Non-attention
/// parameters never share a stream with attention parameters, so two models
/// that differ only in attention kind agree everywhere else.
const TAG_EMBED: u64 = 1;
const TAG_POS: u64 = 2;
const TAG_ATTN: u64 = 3;
const TAG_FFN: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum AttnParams<T = f64> {
    Token(TokenAttnParams<T>),
    Dim(MultiConvParams<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams<T = f64> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f64> {
    pub attn: AttnParams<T>,
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub ffn: FfnParams<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
}

/// Every trainable tensor of a model. The output head reuses `embedding`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f64> {
    /// `vocab × d_model`.
    pub embedding: Tensor<T>,
    /// Learned `max_len × d_model` table; `None` for sinusoidal positions.
    pub positions: Option<Tensor<T>>,
    pub layers: Vec<LayerParams<T>>,
    /// `vocab`.
    pub out_bias: Tensor<T>,
}

impl<T: Real> ModelParams<T> {
    /// Seeded initialization: embeddings `N(0, d_model^-1/2)`, projections and
    /// FFN weights Xavier-uniform, filters `1 + U(−½, ½)`, biases zero, layer
    /// norm `γ = 1, β = 0`.
    pub fn init(config: &BlockConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (v, dm) = (config.vocab_size, config.d_model);
        let sigma = (dm as f64).powf(-0.5);
        let embedding = rand_init(&[v, dm], Init::Normal(sigma), &mut Rng::fork(seed, TAG_EMBED, 0));
        let positions = match config.positions {
            PositionKind::Sinusoidal => None,
            PositionKind::Learned => Some(rand_init(
                &[config.max_len, dm],
                Init::Normal(sigma),
                &mut Rng::fork(seed, TAG_POS, 0),
            )),
        };
        let d = config.head_dim();
        let layers = (0..config.layers)
            .map(|l| {
                let mut rng = Rng::fork(seed, TAG_ATTN, l as u64);
                let mut xavier = |shape: &[usize]| rand_init(shape, Init::XavierUniform, &mut rng);
                let attn = match config.attention {
                    AttentionKind::TokenMultiHead { heads } => AttnParams::Token(TokenAttnParams {
                        wq: (0..heads).map(|_| xavier(&[dm, d])).collect(),
                        wk: (0..heads).map(|_| xavier(&[dm, d])).collect(),
                        wv: (0..heads).map(|_| xavier(&[dm, d])).collect(),
                        wo: xavier(&[heads * d, dm]),
                    }),
                    AttentionKind::DimMultiConv { groups, convs } => {
                        let wq = (0..groups).map(|_| xavier(&[dm, d])).collect();
                        let wk = (0..groups).map(|_| xavier(&[dm, d])).collect();
                        let wv = (0..groups).map(|_| xavier(&[dm, d])).collect();
                        let wo = xavier(&[groups * convs * d, dm]);
                        let filters = (0..groups)
                            .map(|_| {
                                (0..convs)
                                    .map(|_| {
                                        let w: Tensor<T> = rand_uniform(&[d, d], 0.5, 1.5, &mut rng);
                                        ConvFilter::new(w)
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()?;
                        AttnParams::Dim(MultiConvParams { wq, wk, wv, filters, wo })
                    }
                };
                let mut rng = Rng::fork(seed, TAG_FFN, l as u64);
                let ffn = FfnParams {
                    w1: rand_init(&[dm, config.ffn_width], Init::XavierUniform, &mut rng),
                    b1: Tensor::zeros(&[config.ffn_width]),
                    w2: rand_init(&[config.ffn_width, dm], Init::XavierUniform, &mut rng),
                    b2: Tensor::zeros(&[dm]),
                };
                Ok(LayerParams {
                    attn,
                    ln1_gamma: Tensor::filled(&[dm], T::one()),
                    ln1_beta: Tensor::zeros(&[dm]),
                    ffn,
                    ln2_gamma: Tensor::filled(&[dm], T::one()),
                    ln2_beta: Tensor::zeros(&[dm]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams {
            embedding,
            positions,
            layers,
            out_bias: Tensor::zeros(&[v]),
        })
    }

    /// Same structure with every entry zero (gradient and moment buffers).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Every tensor with a stable dotted name, in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        if let Some(p) = &self.positions {
            out.push(("positions".into(), p));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = format!("layers.{l}");
            match &layer.attn {
                AttnParams::Token(p) => {
                    for (kind, ws) in [("wq", &p.wq), ("wk", &p.wk), ("wv", &p.wv)] {
                        for (h, w) in ws.iter().enumerate() {
                            out.push((format!("{pre}.attn.{kind}.{h}"), w));
                        }
                    }
                    out.push((format!("{pre}.attn.wo"), &p.wo));
                }
                AttnParams::Dim(p) => {
                    for (kind, ws) in [("wq", &p.wq), ("wk", &p.wk), ("wv", &p.wv)] {
                        for (g, w) in ws.iter().enumerate() {
                            out.push((format!("{pre}.attn.{kind}.{g}"), w));
                        }
                    }
                    for (g, fs) in p.filters.iter().enumerate() {
                        for (c, f) in fs.iter().enumerate() {
                            out.push((format!("{pre}.attn.filters.{g}.{c}"), f.weights()));
                        }
                    }
                    out.push((format!("{pre}.attn.wo"), &p.wo));
                }
            }
            out.push((format!("{pre}.ln1.gamma"), &layer.ln1_gamma));
            out.push((format!("{pre}.ln1.beta"), &layer.ln1_beta));
            out.push((format!("{pre}.ffn.w1"), &layer.ffn.w1));
            out.push((format!("{pre}.ffn.b1"), &layer.ffn.b1));
            out.push((format!("{pre}.ffn.w2"), &layer.ffn.w2));
            out.push((format!("{pre}.ffn.b2"), &layer.ffn.b2));
            out.push((format!("{pre}.ln2.gamma"), &layer.ln2_gamma));
            out.push((format!("{pre}.ln2.beta"), &layer.ln2_beta));
        }
        out.push(("out_bias".into(), &self.out_bias));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding];
        if let Some(p) = &mut self.positions {
            out.push(p);
        }
        for layer in &mut self.layers {
            match &mut layer.attn {
                AttnParams::Token(p) => {
                    out.extend(p.wq.iter_mut());
                    out.extend(p.wk.iter_mut());
                    out.extend(p.wv.iter_mut());
                    out.push(&mut p.wo);
                }
                AttnParams::Dim(p) => {
                    out.extend(p.wq.iter_mut());
                    out.extend(p.wk.iter_mut());
                    out.extend(p.wv.iter_mut());
                    for fs in &mut p.filters {
                        out.extend(fs.iter_mut().map(ConvFilter::weights_mut));
                    }
                    out.push(&mut p.wo);
                }
            }
            out.push(&mut layer.ln1_gamma);
            out.push(&mut layer.ln1_beta);
            out.push(&mut layer.ffn.w1);
            out.push(&mut layer.ffn.b1);
            out.push(&mut layer.ffn.w2);
            out.push(&mut layer.ffn.b2);
            out.push(&mut layer.ln2_gamma);
            out.push(&mut layer.ln2_beta);
        }
        out.push(&mut self.out_bias);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U> {
            embedding: self.embedding.cast(),
            positions: self.positions.as_ref().map(Tensor::cast),
            layers: Vec::new(),
            out_bias: self.out_bias.cast(),
        };
        for layer in &self.layers {
            let attn = match &layer.attn {
                AttnParams::Token(p) => AttnParams::Token(TokenAttnParams {
                    wq: p.wq.iter().map(Tensor::cast).collect(),
                    wk: p.wk.iter().map(Tensor::cast).collect(),
                    wv: p.wv.iter().map(Tensor::cast).collect(),
                    wo: p.wo.cast(),
                }),
                AttnParams::Dim(p) => AttnParams::Dim(MultiConvParams {
                    wq: p.wq.iter().map(Tensor::cast).collect(),
                    wk: p.wk.iter().map(Tensor::cast).collect(),
                    wv: p.wv.iter().map(Tensor::cast).collect(),
                    filters: p
                        .filters
                        .iter()
                        .map(|fs| {
                            fs.iter()
                                .map(|f| ConvFilter::new(f.weights().cast()).expect("square filter"))
                                .collect()
                        })
                        .collect(),
                    wo: p.wo.cast(),
                }),
            };
            out.layers.push(LayerParams {
                attn,
                ln1_gamma: layer.ln1_gamma.cast(),
                ln1_beta: layer.ln1_beta.cast(),
                ffn: FfnParams {
                    w1: layer.ffn.w1.cast(),
                    b1: layer.ffn.b1.cast(),
                    w2: layer.ffn.w2.cast(),
                    b2: layer.ffn.b2.cast(),
                },
                ln2_gamma: layer.ln2_gamma.cast(),
                ln2_beta: layer.ln2_beta.cast(),
            });
        }
        out
    }
}

/// Fixed sinusoidal table: `PE[t, 2i] = sin(t / 10000^(2i/d))`,
/// `PE[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn sinusoidal_positions<T: Real>(max_len: usize, d_model: usize) -> Tensor<T> {
    let mut pe = Tensor::zeros(&[max_len, d_model]);
    for t in 0..max_len {
        for c in 0..d_model {
            let i = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / d_model as f64);
            let v = if c % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set2(t, c, T::from_f64(v));
        }
    }
    pe
}

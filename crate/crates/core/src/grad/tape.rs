//! Op-level recording, backward dispatch and the finite-difference oracle.

use super::kernels::*;
use crate::attention::{
    dim_attention_parts, token_attention_weights, ConvFilter, MultiConvParams, NormMode, TokenAttnParams,
};
use crate::error::{Error, Result};
use crate::masked::{masked_output_with, MaskedMode};
use crate::numerics::{matmul, softmax_axis, Precision, Real, Rng, SoftmaxAxis, Tensor};

/// A differentiable operation over a fixed list of tensor inputs.
///
/// Input order is part of each variant's contract and matches the order of
/// the returned [`GradSet`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// `[x]`
    Identity,
    /// `[A, B]`
    Matmul,
    /// `[x, W, b]`
    Linear,
    /// `[x]`
    Relu,
    /// `[x]`
    Softmax(SoftmaxAxis),
    /// `[x, γ, β]`
    LayerNorm,
    /// `[Q, K, V]`
    TokenAttention { causal: bool },
    /// `[Q, K, V, W]`
    DimAttention(NormMode),
    /// `[Q, K, V, W]`
    MaskedAttention { mode: MaskedMode, scale_positions: bool },
    /// `[x, Wq_0.., Wk_0.., Wv_0.., Wo]`
    MultiHead { heads: usize, causal: bool },
    /// `[x, Wq_0.., Wk_0.., Wv_0.., W_{0,0}, W_{0,1}.., Wo]`
    MultiConv { groups: usize, convs: usize, mixing: ConvMixing },
    /// `[table]`, rows gathered by `ids` and multiplied by `scale`.
    Embedding { ids: Vec<u32>, scale: f64 },
    /// `[logits]`, mean NLL over non-ignored `targets` as a `[1]` tensor.
    CrossEntropy { targets: Vec<u32> },
}

impl OpKind {
    /// Parses an op identifier. Ops that need token ids (embedding, cross
    /// entropy) carry data and are constructed directly instead.
    pub fn from_name(name: &str) -> Result<Self> {
        let op = match name {
            "identity" => OpKind::Identity,
            "matmul" => OpKind::Matmul,
            "linear" => OpKind::Linear,
            "relu" => OpKind::Relu,
            "softmax_rows_over_k" => OpKind::Softmax(SoftmaxAxis::RowsOverK),
            "softmax_cols_over_j" => OpKind::Softmax(SoftmaxAxis::ColsOverJ),
            "layer_norm" => OpKind::LayerNorm,
            "token_attention" => OpKind::TokenAttention { causal: false },
            "causal_token_attention" => OpKind::TokenAttention { causal: true },
            "dim_attention" => OpKind::DimAttention(NormMode::default()),
            "masked_attention" => OpKind::MaskedAttention {
                mode: MaskedMode::Streaming,
                scale_positions: false,
            },
            other => match other.strip_prefix("dim_attention:") {
                Some(mode) => OpKind::DimAttention(
                    NormMode::parse(mode).ok_or_else(|| Error::UnknownOp(name.to_string()))?,
                ),
                None => return Err(Error::UnknownOp(name.to_string())),
            },
        };
        Ok(op)
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Identity => "identity",
            OpKind::Matmul => "matmul",
            OpKind::Linear => "linear",
            OpKind::Relu => "relu",
            OpKind::Softmax(SoftmaxAxis::RowsOverK) => "softmax_rows_over_k",
            OpKind::Softmax(SoftmaxAxis::ColsOverJ) => "softmax_cols_over_j",
            OpKind::LayerNorm => "layer_norm",
            OpKind::TokenAttention { causal: false } => "token_attention",
            OpKind::TokenAttention { causal: true } => "causal_token_attention",
            OpKind::DimAttention(_) => "dim_attention",
            OpKind::MaskedAttention { .. } => "masked_attention",
            OpKind::MultiHead { .. } => "multi_head",
            OpKind::MultiConv { .. } => "multi_conv",
            OpKind::Embedding { .. } => "embedding",
            OpKind::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn arity(&self) -> usize {
        match self {
            OpKind::Identity | OpKind::Relu | OpKind::Softmax(_) => 1,
            OpKind::Embedding { .. } | OpKind::CrossEntropy { .. } => 1,
            OpKind::Matmul => 2,
            OpKind::Linear | OpKind::LayerNorm | OpKind::TokenAttention { .. } => 3,
            OpKind::DimAttention(_) | OpKind::MaskedAttention { .. } => 4,
            OpKind::MultiHead { heads, .. } => 2 + 3 * heads,
            OpKind::MultiConv { groups, convs, .. } => 2 + 3 * groups + groups * convs,
        }
    }

    /// Evaluates the op, returning the output and any state the backward
    /// rule reads besides the inputs.
    fn eval<T: Real>(&self, inputs: &[Tensor<T>]) -> Result<(Tensor<T>, Saved<T>)> {
        if inputs.len() != self.arity() {
            return Err(Error::precondition(
                "record",
                format!("{} takes {} inputs, got {}", self.name(), self.arity(), inputs.len()),
            ));
        }
        let x = &inputs[0];
        Ok(match self {
            OpKind::Identity => (x.clone(), Saved::None),
            OpKind::Matmul => (matmul(x, &inputs[1])?, Saved::None),
            OpKind::Linear => (linear(x, &inputs[1], &inputs[2])?, Saved::None),
            OpKind::Relu => (relu(x), Saved::None),
            OpKind::Softmax(axis) => {
                let y = softmax_axis(x, *axis)?;
                (y.clone(), Saved::Tensor(y))
            }
            OpKind::LayerNorm => {
                let (y, cache) = layer_norm(x, &inputs[1], &inputs[2])?;
                (y, Saved::LayerNorm(cache))
            }
            OpKind::TokenAttention { causal } => {
                let (o, p) = token_attention_weights(x, &inputs[1], &inputs[2], *causal)?;
                (o, Saved::Tensor(p))
            }
            OpKind::DimAttention(mode) => {
                let w = ConvFilter::new(inputs[3].clone())?;
                let (o, fs) = dim_attention_parts(x, &inputs[1], &inputs[2], &w, *mode)?;
                (o, Saved::Tensor(fs))
            }
            OpKind::MaskedAttention { mode, scale_positions } => {
                let w = ConvFilter::new(inputs[3].clone())?;
                let o = masked_output_with(x, &inputs[1], &inputs[2], &w, *mode, *scale_positions)?;
                (o, Saved::None)
            }
            OpKind::MultiHead { heads, causal } => {
                let p = unpack_heads(&inputs[1..], *heads);
                let (o, cache) = multi_head_forward(x, &p, *causal)?;
                (o, Saved::MultiHead(Box::new((p, cache))))
            }
            OpKind::MultiConv { groups, convs, mixing } => {
                let p = unpack_convs(&inputs[1..], *groups, *convs)?;
                let (o, cache) = multi_conv_forward(x, &p, *mixing)?;
                (o, Saved::MultiConv(Box::new((p, cache))))
            }
            OpKind::Embedding { ids, scale } => (embedding(x, ids, T::from_f64(*scale))?, Saved::None),
            OpKind::CrossEntropy { targets } => {
                let ce = cross_entropy(x, targets)?;
                if ce.count == 0 {
                    return Err(Error::EmptyMask);
                }
                let loss = Tensor::from_vec(&[1], vec![T::from_f64(ce.nll_sum / ce.count as f64)])?;
                let scale = T::from_f64(1.0 / ce.count as f64);
                (loss, Saved::Tensor(ce.dlogits.scale(scale)))
            }
        })
    }
}

fn unpack_heads<T: Real>(ws: &[Tensor<T>], h: usize) -> TokenAttnParams<T> {
    TokenAttnParams {
        wq: ws[..h].to_vec(),
        wk: ws[h..2 * h].to_vec(),
        wv: ws[2 * h..3 * h].to_vec(),
        wo: ws[3 * h].clone(),
    }
}

fn unpack_convs<T: Real>(ws: &[Tensor<T>], g: usize, c: usize) -> Result<MultiConvParams<T>> {
    let filters = (0..g)
        .map(|gi| {
            (0..c)
                .map(|ci| ConvFilter::new(ws[3 * g + gi * c + ci].clone()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiConvParams {
        wq: ws[..g].to_vec(),
        wk: ws[g..2 * g].to_vec(),
        wv: ws[2 * g..3 * g].to_vec(),
        filters,
        wo: ws[3 * g + g * c].clone(),
    })
}

#[derive(Debug, Clone)]
enum Saved<T> {
    None,
    Tensor(Tensor<T>),
    LayerNorm(LayerNormCache<T>),
    MultiHead(Box<(TokenAttnParams<T>, MultiHeadCache<T>)>),
    MultiConv(Box<(MultiConvParams<T>, MultiConvCache<T>)>),
}

/// One gradient per op input, shape-matched to its primal.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet<T = f64> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> GradSet<T> {
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.grads[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }

    pub fn into_vec(self) -> Vec<Tensor<T>> {
        self.grads
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}

/// A recorded op application: the op, its input snapshots, and saved state.
#[derive(Debug, Clone)]
pub struct TapeNode<T = f64> {
    op: OpKind,
    inputs: Vec<Tensor<T>>,
    saved: Saved<T>,
    out_shape: Vec<usize>,
}

impl<T: Real> TapeNode<T> {
    /// Runs `op` forward and records what its backward rule needs.
    pub fn record(op: OpKind, inputs: Vec<Tensor<T>>) -> Result<(Tensor<T>, Self)> {
        let (out, saved) = op.eval(&inputs)?;
        let out_shape = out.shape().to_vec();
        Ok((out, TapeNode { op, inputs, saved, out_shape }))
    }

    pub fn op(&self) -> &OpKind {
        &self.op
    }

    pub fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.out_shape
    }

    /// Recomputes the forward output from the snapshots.
    pub fn replay(&self) -> Result<Tensor<T>> {
        Ok(self.op.eval(&self.inputs)?.0)
    }

    /// `∂L/∂input` for every input given `∂L/∂output = upstream`.
    pub fn backward(&self, upstream: &Tensor<T>) -> Result<GradSet<T>> {
        if upstream.shape() != self.out_shape.as_slice() {
            return Err(Error::shape("backward", &self.out_shape, upstream.shape()));
        }
        let up = upstream;
        let x = &self.inputs;
        let grads = match (&self.op, &self.saved) {
            (OpKind::Identity, _) => vec![up.clone()],
            (OpKind::Matmul, _) => {
                let (da, db) = matmul_backward(&x[0], &x[1], up)?;
                vec![da, db]
            }
            (OpKind::Linear, _) => {
                let (dx, dw, db) = linear_backward(&x[0], &x[1], up)?;
                vec![dx, dw, db]
            }
            (OpKind::Relu, _) => vec![relu_backward(&x[0], up)?],
            (OpKind::Softmax(axis), Saved::Tensor(y)) => vec![softmax_backward(y, up, *axis)?],
            (OpKind::LayerNorm, Saved::LayerNorm(cache)) => {
                let (dx, dg, db) = layer_norm_backward(cache, &x[1], up)?;
                vec![dx, dg, db]
            }
            (OpKind::TokenAttention { .. }, Saved::Tensor(p)) => {
                let (dq, dk, dv) = token_attention_backward(&x[0], &x[1], &x[2], p, up)?;
                vec![dq, dk, dv]
            }
            (OpKind::DimAttention(mode), Saved::Tensor(fs)) => {
                let w = ConvFilter::new(x[3].clone())?;
                let g = dim_attention_backward(&x[0], &x[1], &x[2], &w, fs, *mode, up)?;
                vec![g.dq, g.dk, g.dv, g.dw]
            }
            (OpKind::MaskedAttention { scale_positions, .. }, _) => {
                let w = ConvFilter::new(x[3].clone())?;
                let g = masked_output_backward(&x[0], &x[1], &x[2], &w, up, *scale_positions)?;
                vec![g.dq, g.dk, g.dv, g.dw]
            }
            (OpKind::MultiHead { .. }, Saved::MultiHead(state)) => {
                let (p, cache) = &**state;
                let mut g = zeroed_heads(p);
                let dx = multi_head_backward(p, cache, up, &mut g)?;
                let mut out = vec![dx];
                out.extend(g.wq);
                out.extend(g.wk);
                out.extend(g.wv);
                out.push(g.wo);
                out
            }
            (OpKind::MultiConv { mixing, .. }, Saved::MultiConv(state)) => {
                let (p, cache) = &**state;
                let mut g = zeroed_convs(p);
                let dx = multi_conv_backward(p, cache, *mixing, up, &mut g)?;
                let mut out = vec![dx];
                out.extend(g.wq);
                out.extend(g.wk);
                out.extend(g.wv);
                out.extend(g.filters.into_iter().flatten().map(ConvFilter::into_inner));
                out.push(g.wo);
                out
            }
            (OpKind::Embedding { ids, scale }, _) => {
                let mut dt = Tensor::zeros(x[0].shape());
                embedding_backward(&mut dt, ids, up, T::from_f64(*scale))?;
                vec![dt]
            }
            (OpKind::CrossEntropy { .. }, Saved::Tensor(dlogits)) => vec![dlogits.scale(up.data()[0])],
            (op, _) => {
                return Err(Error::precondition("backward", format!("{} node lacks saved state", op.name())));
            }
        };
        Ok(GradSet { grads })
    }
}

fn zeroed_heads<T: Real>(p: &TokenAttnParams<T>) -> TokenAttnParams<T> {
    let z = |ws: &[Tensor<T>]| ws.iter().map(|w| Tensor::zeros(w.shape())).collect();
    TokenAttnParams {
        wq: z(&p.wq),
        wk: z(&p.wk),
        wv: z(&p.wv),
        wo: Tensor::zeros(p.wo.shape()),
    }
}

fn zeroed_convs<T: Real>(p: &MultiConvParams<T>) -> MultiConvParams<T> {
    let z = |ws: &[Tensor<T>]| ws.iter().map(|w| Tensor::zeros(w.shape())).collect();
    MultiConvParams {
        wq: z(&p.wq),
        wk: z(&p.wk),
        wv: z(&p.wv),
        filters: p
            .filters
            .iter()
            .map(|fs| fs.iter().map(|f| ConvFilter::zeros(f.dim())).collect())
            .collect(),
        wo: Tensor::zeros(p.wo.shape()),
    }
}

/// How an op's output is reduced to the scalar the finite-difference oracle
/// differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scalarize {
    /// `L = Σ y`.
    #[default]
    Sum,
    /// `L = Σ c ∘ y` with fixed weights `c ~ U(−1, 1)` drawn from `seed`.
    ///
    /// A plain sum is blind to any op whose outputs have a constant total
    /// (softmax rows always sum to one, so its sum-gradient is identically
    /// zero); random weights exercise the full Jacobian.
    Weighted(u64),
}

impl Scalarize {
    fn weights<T: Real>(self, shape: &[usize]) -> Tensor<T> {
        match self {
            Scalarize::Sum => Tensor::filled(shape, T::one()),
            Scalarize::Weighted(seed) => {
                let mut rng = Rng::new(seed);
                crate::numerics::rand_uniform(shape, -1.0, 1.0, &mut rng)
            }
        }
    }
}

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Max relative error between the analytic gradient of `Σ op(inputs)` and
/// central differences with step `h`, over every input coordinate.
pub fn fd_check<T: Real>(op: &OpKind, inputs: &[Tensor<T>], h: f64) -> Result<f64> {
    fd_check_with(op, inputs, h, Scalarize::Sum)
}

/// [`fd_check`] with a chosen scalarization.
pub fn fd_check_with<T: Real>(op: &OpKind, inputs: &[Tensor<T>], h: f64, scalarize: Scalarize) -> Result<f64> {
    if T::PRECISION != Precision::F64 {
        return Err(Error::Precision { op: "fd_check" });
    }
    let as_f64 = |ts: &[Tensor<T>]| ts.iter().map(|t| t.cast::<f64>()).collect::<Vec<_>>();
    let mut xs = as_f64(inputs);
    let (out, node) = TapeNode::record(op.clone(), xs.clone())?;
    let c: Tensor = scalarize.weights(out.shape());
    let grads = node.backward(&c)?;
    let loss = |xs: &[Tensor]| -> Result<f64> {
        let y = op.eval(xs)?.0;
        Ok(y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum())
    };
    let mut worst = 0.0f64;
    for i in 0..xs.len() {
        for e in 0..xs[i].len() {
            let orig = xs[i].data()[e];
            let (up, down) = (orig + h, orig - h);
            xs[i].data_mut()[e] = up;
            let plus = loss(&xs)?;
            xs[i].data_mut()[e] = down;
            let minus = loss(&xs)?;
            xs[i].data_mut()[e] = orig;
            // Divide by the step actually taken, not the nominal 2h.
            let numeric = (plus - minus) / (up - down);
            worst = worst.max(relative_error(grads.get(i).data()[e], numeric));
        }
    }
    Ok(worst)
}

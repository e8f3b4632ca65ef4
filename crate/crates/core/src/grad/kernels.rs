//! Forward helpers and their hand-written backward rules.
//!
//! Every backward function takes the saved forward state plus the upstream
//! gradient `∂L/∂output` and returns `∂L/∂input` for each input, in the same
//! shapes as the primals.

use crate::attention::{dim_score, filtered_values, ConvFilter, MultiConvParams, NormMode, TokenAttnParams};
use crate::attention::token_attention_weights;
use crate::error::{Error, Result};
use crate::masked::{masked_output_with, position_scale, MaskedMode};
use crate::numerics::{concat_cols, cum_outer, matmul, matmul_nt, matmul_tn, Real, SoftmaxAxis, Tensor};

/// Target marker for positions that do not contribute to the loss.
pub const IGNORE: u32 = u32::MAX;

/// Variance floor inside layer normalization.
pub const LN_EPS: f64 = 1e-5;

fn check_up<T: Real>(op: &'static str, expected: &[usize], up: &Tensor<T>) -> Result<()> {
    if up.shape() != expected {
        return Err(Error::shape(op, expected, up.shape()));
    }
    Ok(())
}

/// `(dA, dB) = (U·Bᵀ, Aᵀ·U)` for `C = A·B`.
pub fn matmul_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, up: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_up("matmul_backward", &[a.rows(), b.cols()], up)?;
    Ok((matmul_nt(up, b)?, matmul_tn(a, up)?))
}

/// `x·W + b` with the bias broadcast over rows.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut y = matmul(x, w)?;
    let cols = y.cols();
    if b.shape() != [cols] {
        return Err(Error::shape("linear", &[cols], b.shape()));
    }
    let bias = b.data();
    for i in 0..y.rows() {
        for (o, &bv) in y.row_mut(i).iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Ok(y)
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    up: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (dx, dw) = matmul_backward(x, w, up)?;
    Ok((dx, dw, up.col_sums()))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, up: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(up, "relu_backward", |xv, u| if xv > T::zero() { u } else { T::zero() })
}

/// Backward of a matrix softmax given its output `y`.
///
/// Along each normalized slice, `dx = y ∘ (u − ⟨u, y⟩)`.
pub fn softmax_backward<T: Real>(y: &Tensor<T>, up: &Tensor<T>, axis: SoftmaxAxis) -> Result<Tensor<T>> {
    let (r, c) = y.require_matrix("softmax_backward")?;
    check_up("softmax_backward", y.shape(), up)?;
    let mut dx = Tensor::zeros(&[r, c]);
    let (yd, ud) = (y.data(), up.data());
    let out = dx.data_mut();
    let (slices, len, outer, inner) = match axis {
        SoftmaxAxis::RowsOverK => (r, c, c, 1),
        SoftmaxAxis::ColsOverJ => (c, r, 1, c),
    };
    for s in 0..slices {
        let idx = |t: usize| s * outer + t * inner;
        let mut dot = T::zero();
        for t in 0..len {
            dot += yd[idx(t)] * ud[idx(t)];
        }
        for t in 0..len {
            out[idx(t)] = yd[idx(t)] * (ud[idx(t)] - dot);
        }
    }
    Ok(dx)
}

/// Saved state of a row-wise layer normalization.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T = f64> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Row-wise `γ ∘ (x − μ)/σ + β` with `σ = sqrt(var + ε)`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let (n, d) = x.require_matrix("layer_norm")?;
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layer_norm", &[d], gamma.shape()));
    }
    let inv_d = T::from_f64(1.0 / d as f64);
    let eps = T::from_f64(LN_EPS);
    let mut xhat = Tensor::zeros(&[n, d]);
    let mut y = Tensor::zeros(&[n, d]);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mut mean = T::zero();
        for &v in row {
            mean += v;
        }
        mean *= inv_d;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        let is = T::one() / (var * inv_d + eps).sqrt();
        inv_std.push(is);
        let (xr, yr) = (xhat.row_mut(i), y.row_mut(i));
        for t in 0..d {
            xr[t] = (row[t] - mean) * is;
            yr[t] = gamma.data()[t] * xr[t] + beta.data()[t];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

/// Returns `(dx, dγ, dβ)`.
pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    up: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d) = cache.xhat.require_matrix("layer_norm_backward")?;
    check_up("layer_norm_backward", cache.xhat.shape(), up)?;
    let inv_d = T::from_f64(1.0 / d as f64);
    let mut dx = Tensor::zeros(&[n, d]);
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    let g = gamma.data();
    for i in 0..n {
        let (u, xh) = (up.row(i), cache.xhat.row(i));
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for t in 0..d {
            let gt = u[t] * g[t];
            mean_g += gt;
            mean_gx += gt * xh[t];
            dgamma.data_mut()[t] += u[t] * xh[t];
            dbeta.data_mut()[t] += u[t];
        }
        mean_g *= inv_d;
        mean_gx *= inv_d;
        let is = cache.inv_std[i];
        for (t, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = is * (u[t] * g[t] - mean_g - xh[t] * mean_gx);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// `∂L/∂S` from `∂L/∂f(S)` given the saved `F = f(S)`.
pub fn norm_backward<T: Real>(mode: NormMode, fs: &Tensor<T>, dfs: &Tensor<T>, n_tokens: usize) -> Result<Tensor<T>> {
    check_up("norm_backward", fs.shape(), dfs)?;
    match mode {
        NormMode::None => Ok(dfs.clone()),
        NormMode::ScaleInvSqrtN => Ok(dfs.scale(T::from_f64(1.0 / (n_tokens.max(1) as f64).sqrt()))),
        NormMode::SoftmaxRowsOverK => softmax_backward(fs, dfs, SoftmaxAxis::RowsOverK),
        NormMode::SoftmaxColsOverJ => softmax_backward(fs, dfs, SoftmaxAxis::ColsOverJ),
    }
}

/// Gradients of a single-filter dimension-wise attention.
#[derive(Debug, Clone)]
pub struct DimAttnGrads<T = f64> {
    pub dq: Tensor<T>,
    pub dk: Tensor<T>,
    pub dv: Tensor<T>,
    pub dw: Tensor<T>,
}

/// Backward of `O = V·Pᵀ`, `P = W ∘ F`. Returns `(dV, dF, dW)`.
pub fn filter_backward<T: Real>(
    v: &Tensor<T>,
    fs: &Tensor<T>,
    w: &ConvFilter<T>,
    up: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    check_up("filter_backward", v.shape(), up)?;
    let p = w.weights().hadamard(fs)?;
    let dv = matmul(up, &p)?;
    let dp = matmul_tn(up, v)?;
    let dw = dp.hadamard(fs)?;
    let dfs = dp.hadamard(w.weights())?;
    Ok((dv, dfs, dw))
}

/// Backward of `S = QᵀK`. Returns `(dQ, dK) = (K·dSᵀ, Q·dS)`.
pub fn score_backward<T: Real>(q: &Tensor<T>, k: &Tensor<T>, ds: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_up("score_backward", &[q.cols(), k.cols()], ds)?;
    Ok((matmul_nt(k, ds)?, matmul(q, ds)?))
}

/// Backward of `O = V·(W ∘ f(QᵀK))ᵀ` given the saved `F = f(QᵀK)`.
pub fn dim_attention_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &ConvFilter<T>,
    fs: &Tensor<T>,
    mode: NormMode,
    up: &Tensor<T>,
) -> Result<DimAttnGrads<T>> {
    let (dv, dfs, dw) = filter_backward(v, fs, w, up)?;
    let ds = norm_backward(mode, fs, &dfs, q.rows())?;
    let (dq, dk) = score_backward(q, k, &ds)?;
    Ok(DimAttnGrads { dq, dk, dv, dw })
}

/// Backward of scaled dot-product attention given the saved weights `P`.
/// Returns `(dQ, dK, dV)`. Masked entries have `P = 0` and receive nothing.
pub fn token_attention_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    weights: &Tensor<T>,
    up: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    check_up("token_attention_backward", &[q.rows(), v.cols()], up)?;
    let scale = T::from_f64(1.0 / (q.cols() as f64).sqrt());
    let dv = matmul_tn(weights, up)?;
    let dp = matmul_nt(up, v)?;
    let mut dz = softmax_backward(weights, &dp, SoftmaxAxis::RowsOverK)?;
    dz.scale_in_place(scale);
    Ok((matmul(&dz, k)?, matmul_tn(&dz, q)?, dv))
}

/// Backward of the causal filtered output.
///
/// With `G_t = Σ_{n≤t} q_n k_nᵀ` and `O[t,j] = Σ_m W[j,m]·G_t[j,m]·V[t,m]`:
/// `dV` and `dW` read `G_t` directly, and since `q_n` and `k_n` enter every
/// `G_t` with `t ≥ n`, their gradients come from the suffix sum
/// `H_n = Σ_{t≥n} ∂L/∂G_t`, accumulated in one reverse sweep.
pub fn masked_output_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &ConvFilter<T>,
    up: &Tensor<T>,
    scale_positions: bool,
) -> Result<DimAttnGrads<T>> {
    let (n, d) = q.require_matrix("masked_output_backward")?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape("masked_output_backward", q.shape(), v.shape()));
    }
    if w.dim() != d {
        return Err(Error::shape("masked_output_backward", &[d, d], w.weights().shape()));
    }
    check_up("masked_output_backward", q.shape(), up)?;
    let mut u = up.clone();
    if scale_positions {
        for t in 0..n {
            let c = T::from_f64(position_scale(t));
            for x in u.row_mut(t) {
                *x *= c;
            }
        }
    }
    let prefix = cum_outer(q, k)?;
    let wd = w.weights().data();
    let mut h = vec![T::zero(); d * d];
    let mut dq = Tensor::zeros(&[n, d]);
    let mut dk = Tensor::zeros(&[n, d]);
    let mut dv = Tensor::zeros(&[n, d]);
    let mut dw = Tensor::zeros(&[d, d]);
    for t in (0..n).rev() {
        let g = prefix.row(t);
        let (ut, vt) = (u.row(t), v.row(t));
        let dvt = dv.row_mut(t);
        let dwd = dw.data_mut();
        for j in 0..d {
            let uj = ut[j];
            for m in 0..d {
                let idx = j * d + m;
                let uw = uj * wd[idx];
                dvt[m] += uw * g[idx];
                dwd[idx] += uj * g[idx] * vt[m];
                h[idx] += uw * vt[m];
            }
        }
        let (qt, kt) = (q.row(t), k.row(t));
        let dqt = dq.row_mut(t);
        for j in 0..d {
            let mut acc = T::zero();
            for m in 0..d {
                acc += h[j * d + m] * kt[m];
            }
            dqt[j] = acc;
        }
        let dkt = dk.row_mut(t);
        for m in 0..d {
            let mut acc = T::zero();
            for j in 0..d {
                acc += h[j * d + m] * qt[j];
            }
            dkt[m] = acc;
        }
    }
    Ok(DimAttnGrads { dq, dk, dv, dw })
}

/// Rows of `table` gathered by `ids`, times `scale`.
pub fn embedding<T: Real>(table: &Tensor<T>, ids: &[u32], scale: T) -> Result<Tensor<T>> {
    let (vocab, d) = table.require_matrix("embedding")?;
    let mut out = Tensor::zeros(&[ids.len(), d]);
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= vocab {
            return Err(Error::OutOfVocab { id, vocab });
        }
        for (o, &e) in out.row_mut(i).iter_mut().zip(table.row(id as usize)) {
            *o = e * scale;
        }
    }
    Ok(out)
}

/// Scatter-adds `scale · up[i]` into row `ids[i]` of `grad`.
pub fn embedding_backward<T: Real>(grad: &mut Tensor<T>, ids: &[u32], up: &Tensor<T>, scale: T) -> Result<()> {
    let (vocab, d) = grad.require_matrix("embedding_backward")?;
    check_up("embedding_backward", &[ids.len(), d], up)?;
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= vocab {
            return Err(Error::OutOfVocab { id, vocab });
        }
        for (g, &u) in grad.row_mut(id as usize).iter_mut().zip(up.row(i)) {
            *g += u * scale;
        }
    }
    Ok(())
}

/// Summed negative log-likelihood over the rows whose target is not [`IGNORE`].
#[derive(Debug, Clone)]
pub struct CrossEntropy<T = f64> {
    /// Sum of `−log softmax(logits[i])[target[i]]` over scored rows, in f64.
    pub nll_sum: f64,
    pub count: usize,
    /// `∂ nll_sum / ∂ logits`.
    pub dlogits: Tensor<T>,
}

pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[u32]) -> Result<CrossEntropy<T>> {
    let (n, vocab) = logits.require_matrix("cross_entropy")?;
    if targets.len() != n {
        return Err(Error::shape("cross_entropy", logits.shape(), &[targets.len()]));
    }
    let mut dlogits = Tensor::zeros(&[n, vocab]);
    let mut nll_sum = 0.0;
    let mut count = 0;
    for (i, &t) in targets.iter().enumerate() {
        if t == IGNORE {
            continue;
        }
        if t as usize >= vocab {
            return Err(Error::OutOfVocab { id: t, vocab });
        }
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let z: f64 = row.iter().map(|v| (v.to_f64() - max).exp()).sum();
        let lse = max + z.ln();
        nll_sum += lse - row[t as usize].to_f64();
        count += 1;
        for (o, v) in dlogits.row_mut(i).iter_mut().zip(row) {
            *o = T::from_f64((v.to_f64() - lse).exp());
        }
        dlogits.row_mut(i)[t as usize] -= T::one();
    }
    Ok(CrossEntropy { nll_sum, count, dlogits })
}

/// Saved state of a multi-head token-wise attention sublayer.
#[derive(Debug, Clone)]
pub struct MultiHeadCache<T = f64> {
    pub x: Tensor<T>,
    /// Per head `(Q, K, V, P)`.
    pub heads: Vec<[Tensor<T>; 4]>,
    pub concat: Tensor<T>,
}

/// Same values as [`crate::attention::multi_head_attention`], with saved state.
pub fn multi_head_forward<T: Real>(
    x: &Tensor<T>,
    params: &TokenAttnParams<T>,
    causal: bool,
) -> Result<(Tensor<T>, MultiHeadCache<T>)> {
    params.validate()?;
    let mut heads = Vec::with_capacity(params.heads());
    let mut outs = Vec::with_capacity(params.heads());
    for h in 0..params.heads() {
        let q = matmul(x, &params.wq[h])?;
        let k = matmul(x, &params.wk[h])?;
        let v = matmul(x, &params.wv[h])?;
        let (o, p) = token_attention_weights(&q, &k, &v, causal)?;
        outs.push(o);
        heads.push([q, k, v, p]);
    }
    let concat = concat_cols(&outs)?;
    let out = matmul(&concat, &params.wo)?;
    Ok((out, MultiHeadCache { x: x.clone(), heads, concat }))
}

fn zeros_like<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::zeros(t.shape())
}

/// Accumulates `∂L/∂params` into `grads` and returns `∂L/∂x`.
pub fn multi_head_backward<T: Real>(
    params: &TokenAttnParams<T>,
    cache: &MultiHeadCache<T>,
    up: &Tensor<T>,
    grads: &mut TokenAttnParams<T>,
) -> Result<Tensor<T>> {
    let (dconcat, dwo) = matmul_backward(&cache.concat, &params.wo, up)?;
    grads.wo.add_assign(&dwo)?;
    let d = params.wq[0].cols();
    let mut dx = zeros_like(&cache.x);
    for (h, [q, k, v, p]) in cache.heads.iter().enumerate() {
        let dout = dconcat.col_block(h * d, d);
        let (dq, dk, dv) = token_attention_backward(q, k, v, p, &dout)?;
        for (dp, w, gw) in [
            (&dq, &params.wq[h], &mut grads.wq[h]),
            (&dk, &params.wk[h], &mut grads.wk[h]),
            (&dv, &params.wv[h], &mut grads.wv[h]),
        ] {
            let (dxi, dwi) = matmul_backward(&cache.x, w, dp)?;
            gw.add_assign(&dwi)?;
            dx.add_assign(&dxi)?;
        }
    }
    Ok(dx)
}

/// How a multi-conv sublayer mixes positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMixing {
    /// Encoder form: one normalized score matrix per group.
    Global(NormMode),
    /// Decoder form: causal prefix scores, optionally scaled per position.
    Causal { mode: MaskedMode, scale_positions: bool },
}

/// Saved state of a multi-conv sublayer.
#[derive(Debug, Clone)]
pub struct MultiConvCache<T = f64> {
    pub x: Tensor<T>,
    /// Per group `(Q, K, V)` and, for the global form, `F = f(S)`.
    pub groups: Vec<(Tensor<T>, Tensor<T>, Tensor<T>, Option<Tensor<T>>)>,
    pub concat: Tensor<T>,
}

/// Multi-conv sublayer with saved state. The global form matches
/// [`crate::attention::multi_conv_block`] bit for bit.
pub fn multi_conv_forward<T: Real>(
    x: &Tensor<T>,
    params: &MultiConvParams<T>,
    mixing: ConvMixing,
) -> Result<(Tensor<T>, MultiConvCache<T>)> {
    params.validate()?;
    let n = x.rows();
    let mut groups = Vec::with_capacity(params.groups());
    let mut outs = Vec::with_capacity(params.groups() * params.convs());
    for g in 0..params.groups() {
        let q = matmul(x, &params.wq[g])?;
        let k = matmul(x, &params.wk[g])?;
        let v = matmul(x, &params.wv[g])?;
        let fs = match mixing {
            ConvMixing::Global(f) => {
                let fs = f.apply(&dim_score(&q, &k)?, n)?;
                for filter in &params.filters[g] {
                    outs.push(filtered_values(&v, &fs, filter)?);
                }
                Some(fs)
            }
            ConvMixing::Causal { mode, scale_positions } => {
                for filter in &params.filters[g] {
                    outs.push(masked_output_with(&q, &k, &v, filter, mode, scale_positions)?);
                }
                None
            }
        };
        groups.push((q, k, v, fs));
    }
    let concat = concat_cols(&outs)?;
    let out = matmul(&concat, &params.wo)?;
    Ok((out, MultiConvCache { x: x.clone(), groups, concat }))
}

/// Accumulates `∂L/∂params` into `grads` and returns `∂L/∂x`.
pub fn multi_conv_backward<T: Real>(
    params: &MultiConvParams<T>,
    cache: &MultiConvCache<T>,
    mixing: ConvMixing,
    up: &Tensor<T>,
    grads: &mut MultiConvParams<T>,
) -> Result<Tensor<T>> {
    let (dconcat, dwo) = matmul_backward(&cache.concat, &params.wo, up)?;
    grads.wo.add_assign(&dwo)?;
    let d = params.wq[0].cols();
    let c = params.convs();
    let mut dx = zeros_like(&cache.x);
    for (g, (q, k, v, fs)) in cache.groups.iter().enumerate() {
        let mut dq = zeros_like(q);
        let mut dk = zeros_like(k);
        let mut dv = zeros_like(v);
        let mut dfs = Tensor::zeros(&[d, d]);
        for (ci, filter) in params.filters[g].iter().enumerate() {
            let dout = dconcat.col_block((g * c + ci) * d, d);
            match (mixing, fs) {
                (ConvMixing::Global(_), Some(fs)) => {
                    let (dvi, dfi, dwi) = filter_backward(v, fs, filter, &dout)?;
                    dv.add_assign(&dvi)?;
                    dfs.add_assign(&dfi)?;
                    grads.filters[g][ci].weights_mut().add_assign(&dwi)?;
                }
                (ConvMixing::Causal { scale_positions, .. }, _) => {
                    let gr = masked_output_backward(q, k, v, filter, &dout, scale_positions)?;
                    dq.add_assign(&gr.dq)?;
                    dk.add_assign(&gr.dk)?;
                    dv.add_assign(&gr.dv)?;
                    grads.filters[g][ci].weights_mut().add_assign(&gr.dw)?;
                }
                (ConvMixing::Global(_), None) => {
                    return Err(Error::precondition("multi_conv_backward", "cache lacks f(S)"));
                }
            }
        }
        if let (ConvMixing::Global(mode), Some(fs)) = (mixing, fs) {
            let ds = norm_backward(mode, fs, &dfs, q.rows())?;
            let (dqs, dks) = score_backward(q, k, &ds)?;
            dq = dqs;
            dk = dks;
        }
        for (dp, w, gw) in [
            (&dq, &params.wq[g], &mut grads.wq[g]),
            (&dk, &params.wk[g], &mut grads.wk[g]),
            (&dv, &params.wv[g], &mut grads.wv[g]),
        ] {
            let (dxi, dwi) = matmul_backward(&cache.x, w, dp)?;
            gw.add_assign(&dwi)?;
            dx.add_assign(&dxi)?;
        }
    }
    Ok(dx)
}

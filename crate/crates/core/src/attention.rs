//! Encoder-side attention.
//!
//! Two families live here:
//!
//! * token-wise scaled dot-product attention, `softmax(QKᵀ/√d)·V`, and its
//!   multi-head form, kept as the comparison baseline;
//! * dimension-wise attention, built from the `d×d` score matrix `S = QᵀK`.
//!
//! Dimension-wise attention is available in two forms. The *materialized*
//! form builds the order-3 tensor `𝒳[i,j,k] = f(S)[j,k]·V[i,k]` (the
//! Khatri-Rao product of `f(S)` and `V`) and then contracts it, either by
//! summing an index away ([`explicit_rep`], [`implicit_rep`]) or with a shared
//! `d×d` filter ([`conv_extract`]). The *factored* form
//! ([`dim_attention_factored`]) computes the same filtered output as
//! `V·(W ∘ f(S))ᵀ` without ever allocating the `N×d×d` tensor, for
//! `O(N·d²)` cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    concat_cols, matmul, matmul_nt, matmul_tn, softmax_axis, uncounted, Real, SoftmaxAxis, Tensor,
};

/// Normalization `f` applied to the dimension-wise score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    None,
    /// `S / √N`: score entries are sums of `N` products.
    ScaleInvSqrtN,
    /// Softmax of each row `S[j, :]` over `k`.
    #[default]
    SoftmaxRowsOverK,
    /// Softmax of each column `S[:, k]` over `j`.
    SoftmaxColsOverJ,
}

impl NormMode {
    pub const ALL: [NormMode; 4] = [
        NormMode::None,
        NormMode::ScaleInvSqrtN,
        NormMode::SoftmaxRowsOverK,
        NormMode::SoftmaxColsOverJ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormMode::None => "none",
            NormMode::ScaleInvSqrtN => "scale_inv_sqrt_n",
            NormMode::SoftmaxRowsOverK => "softmax_rows_over_k",
            NormMode::SoftmaxColsOverJ => "softmax_cols_over_j",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// `f(S)` for a sequence of `n_tokens` tokens. Not counted as arithmetic.
    pub fn apply<T: Real>(self, s: &Tensor<T>, n_tokens: usize) -> Result<Tensor<T>> {
        s.require_matrix("normalize")?;
        match self {
            NormMode::None => Ok(s.clone()),
            NormMode::ScaleInvSqrtN => {
                let c = T::from_f64(1.0 / (n_tokens.max(1) as f64).sqrt());
                Ok(uncounted(|| s.scale(c)))
            }
            NormMode::SoftmaxRowsOverK => softmax_axis(s, SoftmaxAxis::RowsOverK),
            NormMode::SoftmaxColsOverJ => softmax_axis(s, SoftmaxAxis::ColsOverJ),
        }
    }
}

/// A square `d×d` filter shared across all token slices of `𝒳`.
///
/// Row `W[j, :]` holds the weights that produce output column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter<T = f64>(Tensor<T>);

impl<T: Real> ConvFilter<T> {
    pub fn new(weights: Tensor<T>) -> Result<Self> {
        let (r, c) = weights.require_matrix("ConvFilter")?;
        if r != c {
            return Err(Error::InvalidShape {
                shape: weights.shape().to_vec(),
                reason: "convolution filters are square".into(),
            });
        }
        Ok(ConvFilter(weights))
    }

    pub fn ones(d: usize) -> Self {
        ConvFilter(Tensor::filled(&[d, d], T::one()))
    }

    pub fn zeros(d: usize) -> Self {
        ConvFilter(Tensor::zeros(&[d, d]))
    }

    pub fn identity(d: usize) -> Self {
        ConvFilter(Tensor::identity(d))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.0
    }

    pub fn into_inner(self) -> Tensor<T> {
        self.0
    }
}

/// Projections for the multi-head token-wise baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAttnParams<T = f64> {
    /// One `d_model×d` matrix per head.
    pub wq: Vec<Tensor<T>>,
    pub wk: Vec<Tensor<T>>,
    pub wv: Vec<Tensor<T>>,
    /// `(h·d)×d_model`.
    pub wo: Tensor<T>,
}

impl<T: Real> TokenAttnParams<T> {
    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    /// Returns `(d_model, d)` after checking every extent.
    pub fn validate(&self) -> Result<(usize, usize)> {
        let h = self.heads();
        if h == 0 || self.wk.len() != h || self.wv.len() != h {
            return Err(Error::precondition(
                "multi_head",
                "need the same nonzero number of Q, K, V projections",
            ));
        }
        let (d_model, d) = self.wq[0].require_matrix("multi_head")?;
        for w in self.wq.iter().chain(&self.wk).chain(&self.wv) {
            if w.shape() != [d_model, d] {
                return Err(Error::shape("multi_head", self.wq[0].shape(), w.shape()));
            }
        }
        if h * d != d_model {
            return Err(Error::precondition(
                "multi_head",
                format!("d_model={d_model} is not heads({h}) × head_dim({d})"),
            ));
        }
        if self.wo.shape() != [h * d, d_model] {
            return Err(Error::shape("multi_head", &[h * d, d_model], self.wo.shape()));
        }
        Ok((d_model, d))
    }
}

/// Parameters of the dimension-wise multi-conv block: `g` groups, each with
/// its own Q/K/V projections and `c` filters applied to that group's tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiConvParams<T = f64> {
    /// One `d_model×d` matrix per group.
    pub wq: Vec<Tensor<T>>,
    pub wk: Vec<Tensor<T>>,
    pub wv: Vec<Tensor<T>>,
    /// `filters[g]` holds the `c` filters of group `g`.
    pub filters: Vec<Vec<ConvFilter<T>>>,
    /// `(g·c·d)×d_model`.
    pub wo: Tensor<T>,
}

impl<T: Real> MultiConvParams<T> {
    pub fn groups(&self) -> usize {
        self.wq.len()
    }

    pub fn convs(&self) -> usize {
        self.filters.first().map_or(0, Vec::len)
    }

    /// Returns `(d_model, d)` after checking every extent.
    pub fn validate(&self) -> Result<(usize, usize)> {
        let g = self.groups();
        if g == 0 || self.wk.len() != g || self.wv.len() != g || self.filters.len() != g {
            return Err(Error::precondition(
                "multi_conv",
                "need the same nonzero number of groups for projections and filters",
            ));
        }
        let c = self.convs();
        if c == 0 || self.filters.iter().any(|f| f.len() != c) {
            return Err(Error::precondition(
                "multi_conv",
                "every group needs the same nonzero number of filters",
            ));
        }
        let (d_model, d) = self.wq[0].require_matrix("multi_conv")?;
        for w in self.wq.iter().chain(&self.wk).chain(&self.wv) {
            if w.shape() != [d_model, d] {
                return Err(Error::shape("multi_conv", self.wq[0].shape(), w.shape()));
            }
        }
        for f in self.filters.iter().flatten() {
            if f.dim() != d {
                return Err(Error::shape("multi_conv", &[d, d], f.weights().shape()));
            }
        }
        if self.wo.shape() != [g * c * d, d_model] {
            return Err(Error::shape("multi_conv", &[g * c * d, d_model], self.wo.shape()));
        }
        Ok((d_model, d))
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    let dims = a.require_matrix(op)?;
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(dims)
}

/// Token-wise attention returning the output and the `N×N` weight matrix.
///
/// With `causal`, position `i` only attends to positions `≤ i`. Scaling and
/// softmax are excluded from operation counts.
pub fn token_attention_weights<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    causal: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, d) = same_shape("token_attention", q, k)?;
    if v.rows() != n || v.rank() != 2 {
        return Err(Error::shape("token_attention", q.shape(), v.shape()));
    }
    if d == 0 {
        return Err(Error::precondition("token_attention", "head dimension is zero"));
    }
    let mut scores = matmul_nt(q, k)?;
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    uncounted(|| {
        scores.scale_in_place(scale);
        if causal {
            for i in 0..n {
                for j in i + 1..n {
                    scores.set2(i, j, T::from_f64(f64::NEG_INFINITY));
                }
            }
        }
    });
    let weights = softmax_axis(&scores, SoftmaxAxis::RowsOverK)?;
    let out = matmul(&weights, v)?;
    Ok((out, weights))
}

/// `softmax(QKᵀ/√d)·V` with the softmax taken over keys.
pub fn token_attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(token_attention_weights(q, k, v, false)?.0)
}

/// Multi-head token-wise attention over `x: N×d_model`, optionally causal.
pub fn multi_head_attention<T: Real>(
    x: &Tensor<T>,
    params: &TokenAttnParams<T>,
    causal: bool,
) -> Result<Tensor<T>> {
    let (d_model, _) = params.validate()?;
    if x.require_matrix("multi_head")?.1 != d_model {
        return Err(Error::shape("multi_head", x.shape(), params.wq[0].shape()));
    }
    let mut heads = Vec::with_capacity(params.heads());
    for h in 0..params.heads() {
        let q = matmul(x, &params.wq[h])?;
        let k = matmul(x, &params.wk[h])?;
        let v = matmul(x, &params.wv[h])?;
        heads.push(token_attention_weights(&q, &k, &v, causal)?.0);
    }
    matmul(&concat_cols(&heads)?, &params.wo)
}

/// Multi-head baseline: `Concat(head_1..head_h)·W^O`.
pub fn multi_head_baseline<T: Real>(x: &Tensor<T>, params: &TokenAttnParams<T>) -> Result<Tensor<T>> {
    multi_head_attention(x, params, false)
}

/// Dimension-wise score matrix `S = QᵀK`, `S[i,j] = Σ_n Q[n,i]·K[n,j]`.
pub fn dim_score<T: Real>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("dim_score", q, k)?;
    matmul_tn(q, k)
}

/// Centers each column of `h` to zero mean and scales it to unit variance.
/// Columns with zero variance are left at zero.
pub fn standardize_columns(h: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (n, d) = h.require_matrix("standardize_columns")?;
    let mut out = h.clone();
    for j in 0..d {
        let mean = (0..n).map(|i| h.get2(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (h.get2(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        for i in 0..n {
            out.set2(i, j, (h.get2(i, j) - mean) * inv);
        }
    }
    Ok(out)
}

/// Largest column mean magnitude a centered input may have.
pub const CENTERING_TOLERANCE: f64 = 1e-12;

/// Checks `S = Wqᵀ·(HᵀH)·Wk` for `S = dim_score(H·Wq, H·Wk)` on a
/// column-centered `H` and returns the largest absolute deviation.
///
/// For centered `H`, `HᵀH = (N−1)·C` with `C` the sample covariance, so the
/// score matrix is the covariance sandwiched between the two projections.
pub fn covariance_identity_check(
    h: &Tensor<f64>,
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
) -> Result<f64> {
    let (n, d) = h.require_matrix("covariance_identity_check")?;
    for j in 0..d {
        let mean = (0..n).map(|i| h.get2(i, j)).sum::<f64>() / n as f64;
        if mean.abs() > CENTERING_TOLERANCE {
            return Err(Error::precondition(
                "covariance_identity_check",
                format!("column {j} has mean {mean:e}; input must be centered"),
            ));
        }
    }
    let s = dim_score(&matmul(h, wq)?, &matmul(h, wk)?)?;
    let gram = matmul_tn(h, h)?;
    let rhs = matmul(&matmul_tn(wq, &gram)?, wk)?;
    Ok(s.max_abs_diff(&rhs))
}

/// Khatri-Rao tensor `𝒳[i,j,k] = f(S)[j,k]·V[i,k]`, shape `N×d×d`.
///
/// Slice `𝒳[:, :, k]` is the outer product of column `k` of `V` with column
/// `k` of `f(S)`.
pub fn kr_tensor<T: Real>(s: &Tensor<T>, v: &Tensor<T>, f: NormMode) -> Result<Tensor<T>> {
    let (d, d2) = s.require_matrix("kr_tensor")?;
    let (n, dv) = v.require_matrix("kr_tensor")?;
    if d != d2 || dv != d {
        return Err(Error::shape("kr_tensor", s.shape(), v.shape()));
    }
    let fs = f.apply(s, n)?;
    let mut out = Vec::with_capacity(n * d * d);
    for i in 0..n {
        let vi = v.row(i);
        for j in 0..d {
            let fj = fs.row(j);
            out.extend(fj.iter().zip(vi).map(|(&a, &b)| a * b));
        }
    }
    Tensor::from_vec(&[n, d, d], out)
}

fn require_kr(x: &Tensor<impl Real>, op: &'static str) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, d, d2] if d == d2 => Ok((n, d)),
        _ => Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("{op} expects an N×d×d tensor"),
        }),
    }
}

/// Explicit representation: `X[i,k] = Σ_j 𝒳[i,j,k]`.
pub fn explicit_rep<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = require_kr(x, "explicit_rep")?;
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        for k in 0..d {
            let mut acc = x.get3(i, 0, k);
            for j in 1..d {
                acc += x.get3(i, j, k);
            }
            out.set2(i, k, acc);
        }
    }
    Ok(out)
}

/// Implicit representation: `X[i,j] = Σ_k 𝒳[i,j,k]`.
pub fn implicit_rep<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = require_kr(x, "implicit_rep")?;
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        for j in 0..d {
            let mut acc = x.get3(i, j, 0);
            for k in 1..d {
                acc += x.get3(i, j, k);
            }
            out.set2(i, j, acc);
        }
    }
    Ok(out)
}

/// Filter contraction along the token axis: `O[i,j] = Σ_m W[j,m]·𝒳[i,j,m]`.
///
/// The same filter is applied to every token slice `𝒳[i, :, :]`.
pub fn conv_extract<T: Real>(x: &Tensor<T>, w: &ConvFilter<T>) -> Result<Tensor<T>> {
    let (n, d) = require_kr(x, "conv_extract")?;
    if w.dim() != d {
        return Err(Error::shape("conv_extract", x.shape(), w.weights().shape()));
    }
    let w = w.weights();
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        for j in 0..d {
            let mut acc = w.get2(j, 0) * x.get3(i, j, 0);
            for m in 1..d {
                acc += w.get2(j, m) * x.get3(i, j, m);
            }
            out.set2(i, j, acc);
        }
    }
    Ok(out)
}

/// Factored dimension-wise attention returning `(O, f(S))`.
pub fn dim_attention_parts<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &ConvFilter<T>,
    f: NormMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, d) = same_shape("dim_attention", q, k)?;
    if v.shape() != q.shape() {
        return Err(Error::shape("dim_attention", q.shape(), v.shape()));
    }
    if w.dim() != d {
        return Err(Error::shape("dim_attention", &[d, d], w.weights().shape()));
    }
    let fs = f.apply(&dim_score(q, k)?, n)?;
    let out = filtered_values(v, &fs, w)?;
    Ok((out, fs))
}

/// `V·(W ∘ F)ᵀ` for an already-normalized score matrix `F`.
pub fn filtered_values<T: Real>(v: &Tensor<T>, fs: &Tensor<T>, w: &ConvFilter<T>) -> Result<Tensor<T>> {
    let p = w.weights().hadamard(fs)?;
    matmul_nt(v, &p)
}

/// Dimension-wise attention with a filter, `O = V·(W ∘ f(QᵀK))ᵀ`.
///
/// Equal to `conv_extract(kr_tensor(dim_score(Q, K), V, f), W)` but never
/// allocates the `N×d×d` tensor.
pub fn dim_attention_factored<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &ConvFilter<T>,
    f: NormMode,
) -> Result<Tensor<T>> {
    Ok(dim_attention_parts(q, k, v, w, f)?.0)
}

/// Concatenated filter outputs of a multi-conv block, `N×(g·c·d)`, before
/// the output projection.
///
/// Each group projects to `Q, K, V`, normalizes one score matrix, and applies
/// its `c` filters through the factored path. Blocks are laid out group-major.
pub fn multi_conv_outputs<T: Real>(
    x: &Tensor<T>,
    params: &MultiConvParams<T>,
    f: NormMode,
) -> Result<Tensor<T>> {
    let (d_model, _) = params.validate()?;
    let (n, width) = x.require_matrix("multi_conv")?;
    if width != d_model {
        return Err(Error::shape("multi_conv", x.shape(), params.wq[0].shape()));
    }
    let mut outputs = Vec::with_capacity(params.groups() * params.convs());
    for g in 0..params.groups() {
        let q = matmul(x, &params.wq[g])?;
        let k = matmul(x, &params.wk[g])?;
        let v = matmul(x, &params.wv[g])?;
        let fs = f.apply(&dim_score(&q, &k)?, n)?;
        for filter in &params.filters[g] {
            outputs.push(filtered_values(&v, &fs, filter)?);
        }
    }
    concat_cols(&outputs)
}

/// Multi-conv block: [`multi_conv_outputs`] projected by `W^O`.
pub fn multi_conv_block<T: Real>(
    x: &Tensor<T>,
    params: &MultiConvParams<T>,
    f: NormMode,
) -> Result<Tensor<T>> {
    matmul(&multi_conv_outputs(x, params, f)?, &params.wo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rand_uniform, Rng};

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows)
    }

    fn fixture() -> (Tensor, Tensor) {
        (m(&[&[1.0, 2.0], &[3.0, 4.0]]), m(&[&[1.0, 1.0], &[2.0, 2.0]]))
    }

    /// Literal double loop of scaled dot-product attention.
    fn token_attention_loops(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let (n, d) = (q.rows(), q.cols());
        let mut out = Tensor::zeros(&[n, v.cols()]);
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|r| q.get2(i, r) * k.get2(j, r)).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..v.cols() {
                out.set2(i, c, (0..n).map(|j| e[j] / z * v.get2(j, c)).sum());
            }
        }
        out
    }

    #[test]
    fn token_attention_single_token_returns_value_row() {
        let q = m(&[&[0.3, -1.2]]);
        let k = m(&[&[2.0, 0.5]]);
        let v = m(&[&[7.0, -3.0]]);
        assert_eq!(token_attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn token_attention_zero_keys_average_values() {
        let mut rng = Rng::new(3);
        let q: Tensor = rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let v: Tensor = rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let out = token_attention(&q, &Tensor::zeros(&[4, 3]), &v).unwrap();
        for c in 0..3 {
            let mean = (0..4).map(|i| v.get2(i, c)).sum::<f64>() / 4.0;
            for i in 0..4 {
                assert!((out.get2(i, c) - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn token_attention_matches_loop_oracle_and_rows_sum_to_one() {
        let mut rng = Rng::new(17);
        let q: Tensor = rand_uniform(&[3, 2], -1.0, 1.0, &mut rng);
        let k: Tensor = rand_uniform(&[3, 2], -1.0, 1.0, &mut rng);
        let v: Tensor = rand_uniform(&[3, 2], -1.0, 1.0, &mut rng);
        let (out, weights) = token_attention_weights(&q, &k, &v, false).unwrap();
        assert!(out.max_abs_diff(&token_attention_loops(&q, &k, &v)) < 1e-14);
        for i in 0..3 {
            assert!((weights.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_token_attention_ignores_future() {
        let mut rng = Rng::new(2);
        let q: Tensor = rand_uniform(&[5, 2], -1.0, 1.0, &mut rng);
        let k: Tensor = rand_uniform(&[5, 2], -1.0, 1.0, &mut rng);
        let v: Tensor = rand_uniform(&[5, 2], -1.0, 1.0, &mut rng);
        let (out, w) = token_attention_weights(&q, &k, &v, true).unwrap();
        assert_eq!(out.row(0), v.row(0));
        for i in 0..5 {
            for j in i + 1..5 {
                assert_eq!(w.get2(i, j), 0.0);
            }
        }
    }

    fn random_token_params(rng: &mut Rng, h: usize, d_model: usize) -> TokenAttnParams {
        let d = d_model / h;
        let mut mk = |r: usize, c: usize| rand_uniform(&[r, c], -1.0, 1.0, rng);
        TokenAttnParams {
            wq: (0..h).map(|_| mk(d_model, d)).collect(),
            wk: (0..h).map(|_| mk(d_model, d)).collect(),
            wv: (0..h).map(|_| mk(d_model, d)).collect(),
            wo: mk(h * d, d_model),
        }
    }

    #[test]
    fn multi_head_single_identity_head_is_token_attention() {
        let mut rng = Rng::new(8);
        let x: Tensor = rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let p = TokenAttnParams {
            wq: vec![Tensor::identity(3)],
            wk: vec![Tensor::identity(3)],
            wv: vec![Tensor::identity(3)],
            wo: Tensor::identity(3),
        };
        let out = multi_head_baseline(&x, &p).unwrap();
        assert!(out.max_abs_diff(&token_attention(&x, &x, &x).unwrap()) < 1e-15);
    }

    #[test]
    fn multi_head_zero_output_projection() {
        let mut rng = Rng::new(9);
        let x: Tensor = rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let mut p = random_token_params(&mut rng, 2, 4);
        p.wo = Tensor::zeros(&[4, 4]);
        assert!(multi_head_baseline(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multi_head_matches_loop_oracle() {
        let mut rng = Rng::new(10);
        let x: Tensor = rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let p = random_token_params(&mut rng, 2, 4);
        let mut concat = Tensor::zeros(&[3, 4]);
        for h in 0..2 {
            let proj = |w: &Tensor| {
                let mut o = Tensor::zeros(&[3, 2]);
                for i in 0..3 {
                    for c in 0..2 {
                        o.set2(i, c, (0..4).map(|r| x.get2(i, r) * w.get2(r, c)).sum());
                    }
                }
                o
            };
            let head = token_attention_loops(&proj(&p.wq[h]), &proj(&p.wk[h]), &proj(&p.wv[h]));
            for i in 0..3 {
                for c in 0..2 {
                    concat.set2(i, h * 2 + c, head.get2(i, c));
                }
            }
        }
        let mut want = Tensor::zeros(&[3, 4]);
        for i in 0..3 {
            for c in 0..4 {
                want.set2(i, c, (0..4).map(|r| concat.get2(i, r) * p.wo.get2(r, c)).sum());
            }
        }
        assert!(multi_head_baseline(&x, &p).unwrap().max_abs_diff(&want) < 1e-13);
    }

    #[test]
    fn multi_head_rejects_indivisible_width() {
        let p = TokenAttnParams::<f64> {
            wq: vec![Tensor::zeros(&[5, 2]); 2],
            wk: vec![Tensor::zeros(&[5, 2]); 2],
            wv: vec![Tensor::zeros(&[5, 2]); 2],
            wo: Tensor::zeros(&[4, 5]),
        };
        let x = Tensor::zeros(&[3, 5]);
        assert!(matches!(
            multi_head_baseline(&x, &p),
            Err(Error::Precondition { .. })
        ));
    }

    #[test]
    fn dim_score_examples() {
        let k = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(dim_score(&Tensor::identity(2), &k).unwrap(), k);
        let q = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let k = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(dim_score(&q, &k).unwrap(), m(&[&[26.0, 30.0], &[38.0, 44.0]]));
        let q = m(&[&[1.0], &[-1.0]]);
        let k = m(&[&[1.0], &[1.0]]);
        assert_eq!(dim_score(&q, &k).unwrap().get2(0, 0), 0.0);
    }

    #[test]
    fn dim_score_rejects_mismatch() {
        let q = Tensor::<f64>::zeros(&[3, 2]);
        let k = Tensor::<f64>::zeros(&[2, 2]);
        assert!(dim_score(&q, &k).is_err());
    }

    #[test]
    fn covariance_identity_examples() {
        let mut rng = Rng::new(21);
        let raw: Tensor = rand_uniform(&[16, 4], -2.0, 2.0, &mut rng);
        let h = standardize_columns(&raw).unwrap();
        let id = Tensor::identity(4);
        assert_eq!(covariance_identity_check(&h, &id, &id).unwrap(), 0.0);
        let wq: Tensor = rand_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        let wk: Tensor = rand_uniform(&[4, 4], -1.0, 1.0, &mut rng);
        assert!(covariance_identity_check(&h, &wq, &wk).unwrap() <= 1e-10);
    }

    #[test]
    fn covariance_constant_column_centers_to_zero() {
        let mut rng = Rng::new(22);
        let mut raw: Tensor = rand_uniform(&[8, 3], -1.0, 1.0, &mut rng);
        for i in 0..8 {
            raw.set2(i, 1, 4.5);
        }
        let h = standardize_columns(&raw).unwrap();
        let gram = matmul_tn(&h, &h).unwrap();
        for t in 0..3 {
            assert_eq!(gram.get2(1, t), 0.0);
            assert_eq!(gram.get2(t, 1), 0.0);
        }
    }

    #[test]
    fn covariance_rejects_uncentered_input() {
        let h = m(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let id = Tensor::identity(2);
        assert!(matches!(
            covariance_identity_check(&h, &id, &id),
            Err(Error::Precondition { .. })
        ));
    }

    #[test]
    fn kr_tensor_fixture() {
        let (s, v) = fixture();
        let x = kr_tensor(&s, &v, NormMode::None).unwrap();
        assert_eq!(x.shape(), &[2, 2, 2]);
        assert_eq!(x.row(0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.row(1), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn kr_tensor_edge_cases() {
        let (s, _) = fixture();
        let zero = kr_tensor(&s, &Tensor::zeros(&[3, 2]), NormMode::SoftmaxRowsOverK).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        for f in NormMode::ALL {
            let x = kr_tensor(&s, &m(&[&[1.0, 1.0]]), f).unwrap();
            assert_eq!(x.data(), f.apply(&s, 1).unwrap().data());
        }
        assert!(kr_tensor(&s, &Tensor::zeros(&[3, 3]), NormMode::None).is_err());
    }

    #[test]
    fn explicit_rep_examples() {
        let (s, v) = fixture();
        let x = kr_tensor(&s, &v, NormMode::None).unwrap();
        assert_eq!(explicit_rep(&x).unwrap(), m(&[&[4.0, 6.0], &[8.0, 12.0]]));

        let mut rng = Rng::new(4);
        let v: Tensor = rand_uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let s: Tensor = rand_uniform(&[3, 3], -2.0, 2.0, &mut rng);
        let x = kr_tensor(&s, &v, NormMode::SoftmaxColsOverJ).unwrap();
        assert!(explicit_rep(&x).unwrap().max_abs_diff(&v) < 1e-12);

        let zero = explicit_rep(&Tensor::<f64>::zeros(&[2, 3, 3])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn implicit_rep_examples() {
        let (s, v) = fixture();
        let x = kr_tensor(&s, &v, NormMode::None).unwrap();
        assert_eq!(implicit_rep(&x).unwrap(), m(&[&[3.0, 7.0], &[6.0, 14.0]]));

        let mut rng = Rng::new(5);
        let v: Tensor = rand_uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let s: Tensor = rand_uniform(&[3, 3], -2.0, 2.0, &mut rng);
        let x = kr_tensor(&s, &v, NormMode::SoftmaxRowsOverK).unwrap();
        let fs = NormMode::SoftmaxRowsOverK.apply(&s, 5).unwrap();
        let want = matmul_nt(&v, &fs).unwrap();
        assert!(implicit_rep(&x).unwrap().max_abs_diff(&want) < 1e-12);

        let x = kr_tensor(&Tensor::identity(3).scale(2.5), &v, NormMode::None).unwrap();
        assert!(implicit_rep(&x).unwrap().max_abs_diff(&v.scale(2.5)) < 1e-15);
    }

    #[test]
    fn conv_extract_examples() {
        let (s, v) = fixture();
        let x = kr_tensor(&s, &v, NormMode::None).unwrap();
        assert_eq!(
            conv_extract(&x, &ConvFilter::ones(2)).unwrap(),
            implicit_rep(&x).unwrap()
        );
        assert_eq!(
            conv_extract(&x, &ConvFilter::identity(2)).unwrap(),
            m(&[&[1.0, 4.0], &[2.0, 8.0]])
        );
        let zero = conv_extract(&x, &ConvFilter::new(Tensor::zeros(&[2, 2])).unwrap()).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(conv_extract(&x, &ConvFilter::ones(3)).is_err());
    }

    #[test]
    fn factored_examples() {
        // Q = I, K = S gives QᵀK = S for the 2×2 fixture.
        let (s, v) = fixture();
        let q = Tensor::identity(2);
        let out = dim_attention_factored(&q, &s, &v, &ConvFilter::identity(2), NormMode::None).unwrap();
        assert_eq!(out, m(&[&[1.0, 4.0], &[2.0, 8.0]]));
        let out = dim_attention_factored(&q, &s, &v, &ConvFilter::ones(2), NormMode::None).unwrap();
        assert_eq!(out, m(&[&[3.0, 7.0], &[6.0, 14.0]]));
        let out = dim_attention_factored(
            &q,
            &s,
            &Tensor::zeros(&[2, 2]),
            &ConvFilter::ones(2),
            NormMode::SoftmaxRowsOverK,
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn convfilter_must_be_square() {
        assert!(ConvFilter::new(Tensor::<f64>::zeros(&[2, 3])).is_err());
    }

    fn random_conv_params(rng: &mut Rng, g: usize, c: usize, d_model: usize, d: usize) -> MultiConvParams {
        let mut mk = |r: usize, cc: usize| rand_uniform(&[r, cc], -1.0, 1.0, rng);
        MultiConvParams {
            wq: (0..g).map(|_| mk(d_model, d)).collect(),
            wk: (0..g).map(|_| mk(d_model, d)).collect(),
            wv: (0..g).map(|_| mk(d_model, d)).collect(),
            filters: (0..g)
                .map(|_| (0..c).map(|_| ConvFilter::new(mk(d, d)).unwrap()).collect())
                .collect(),
            wo: mk(g * c * d, d_model),
        }
    }

    #[test]
    fn multi_conv_identity_single_filter_is_factored() {
        let mut rng = Rng::new(30);
        let x: Tensor = rand_uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let w = ConvFilter::new(rand_uniform(&[3, 3], -1.0, 1.0, &mut rng)).unwrap();
        let p = MultiConvParams {
            wq: vec![Tensor::identity(3)],
            wk: vec![Tensor::identity(3)],
            wv: vec![Tensor::identity(3)],
            filters: vec![vec![w.clone()]],
            wo: Tensor::identity(3),
        };
        let f = NormMode::SoftmaxRowsOverK;
        let out = multi_conv_block(&x, &p, f).unwrap();
        let want = dim_attention_factored(&x, &x, &x, &w, f).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn multi_conv_identical_filters_duplicate_blocks() {
        let mut rng = Rng::new(31);
        let x: Tensor = rand_uniform(&[4, 2], -1.0, 1.0, &mut rng);
        let w = ConvFilter::new(rand_uniform(&[2, 2], -1.0, 1.0, &mut rng)).unwrap();
        let p = MultiConvParams {
            wq: vec![Tensor::identity(2)],
            wk: vec![Tensor::identity(2)],
            wv: vec![Tensor::identity(2)],
            filters: vec![vec![w.clone(); 8]],
            wo: Tensor::zeros(&[16, 2]),
        };
        let concat = multi_conv_outputs(&x, &p, NormMode::SoftmaxRowsOverK).unwrap();
        assert_eq!(concat.shape(), &[4, 16]);
        let single = dim_attention_factored(&x, &x, &x, &w, NormMode::SoftmaxRowsOverK).unwrap();
        for b in 0..8 {
            assert_eq!(concat.col_block(2 * b, 2), single);
        }
    }

    #[test]
    fn multi_conv_matches_loop_oracle() {
        let mut rng = Rng::new(32);
        let (n, d) = (4, 4);
        let x: Tensor = rand_uniform(&[n, d], -1.0, 1.0, &mut rng);
        let p = random_conv_params(&mut rng, 1, 2, d, d);
        let f = NormMode::SoftmaxRowsOverK;

        let proj = |w: &Tensor| {
            let mut o = Tensor::<f64>::zeros(&[n, d]);
            for i in 0..n {
                for c in 0..d {
                    o.set2(i, c, (0..d).map(|r| x.get2(i, r) * w.get2(r, c)).sum());
                }
            }
            o
        };
        let (q, k, v) = (proj(&p.wq[0]), proj(&p.wk[0]), proj(&p.wv[0]));
        let mut s = Tensor::<f64>::zeros(&[d, d]);
        for i in 0..d {
            for j in 0..d {
                s.set2(i, j, (0..n).map(|t| q.get2(t, i) * k.get2(t, j)).sum());
            }
        }
        let fs = f.apply(&s, n).unwrap();
        let mut concat = Tensor::zeros(&[n, 2 * d]);
        for (c, filt) in p.filters[0].iter().enumerate() {
            for i in 0..n {
                for j in 0..d {
                    let o: f64 = (0..d)
                        .map(|mm| filt.weights().get2(j, mm) * fs.get2(j, mm) * v.get2(i, mm))
                        .sum();
                    concat.set2(i, c * d + j, o);
                }
            }
        }
        let mut want = Tensor::zeros(&[n, d]);
        for i in 0..n {
            for c in 0..d {
                want.set2(i, c, (0..2 * d).map(|r| concat.get2(i, r) * p.wo.get2(r, c)).sum());
            }
        }
        assert!(multi_conv_block(&x, &p, f).unwrap().max_abs_diff(&want) < 1e-13);
    }

    #[test]
    fn multi_conv_rejects_width_mismatch() {
        let mut rng = Rng::new(33);
        let mut p = random_conv_params(&mut rng, 1, 2, 4, 4);
        p.wo = Tensor::zeros(&[4, 4]);
        let x = Tensor::zeros(&[3, 4]);
        assert!(multi_conv_block(&x, &p, NormMode::None).is_err());
    }
}

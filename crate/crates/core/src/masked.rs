//! Causal dimension-wise attention.
//!
//! The masked score tensor `𝒮` (shape `d×d×N`) gives every position `t` its
//! own score matrix built only from tokens `n ≤ t`:
//!
//! ```text
//! 𝒮[i,j,t] = Σ_n Q[n,i]·K[n,j]·M[n,t],   M[n,t] = 1 if n ≤ t else 0
//! ```
//!
//! The naive form evaluates that sum literally (`O(N²d²)`). Since slice `t` is
//! slice `t−1` plus `q_t k_tᵀ`, the streaming form keeps one running `d×d`
//! state instead and reaches the same values in `O(N·d²)`.

use serde::{Deserialize, Serialize};

use crate::attention::{conv_extract, ConvFilter};
use crate::error::{Error, Result};
use crate::numerics::{cum_outer, uncounted, Real, Tensor};

/// Upper-triangular mask with inclusive diagonal: `M[n,t] = 1` iff `n ≤ t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalMask {
    n: usize,
}

impl CausalMask {
    pub fn new(n: usize) -> Self {
        CausalMask { n }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Whether token `source` is visible when scoring position `target`.
    pub fn allows(&self, source: usize, target: usize) -> bool {
        source <= target
    }

    pub fn matrix<T: Real>(&self) -> Tensor<T> {
        let mut m = Tensor::zeros(&[self.n.max(1), self.n.max(1)]);
        for r in 0..self.n {
            for c in r..self.n {
                m.set2(r, c, T::one());
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskedMode {
    /// Literal four-index evaluation of the masked score tensor.
    Naive,
    /// Running prefix state, linear in `N`.
    #[default]
    Streaming,
}

impl MaskedMode {
    pub fn name(self) -> &'static str {
        match self {
            MaskedMode::Naive => "naive",
            MaskedMode::Streaming => "streaming",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [MaskedMode::Naive, MaskedMode::Streaming].into_iter().find(|m| m.name() == s)
    }
}

fn check_qk<T: Real>(op: &'static str, q: &Tensor<T>, k: &Tensor<T>) -> Result<(usize, usize)> {
    let dims = q.require_matrix(op)?;
    if q.shape() != k.shape() {
        return Err(Error::shape(op, q.shape(), k.shape()));
    }
    Ok(dims)
}

/// `𝒮` by explicit loops over `(i, j, t, n)`, multiplying by the mask entry.
pub fn masked_score_naive<T: Real>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = check_qk("masked_score_naive", q, k)?;
    let mask = CausalMask::new(n).matrix::<T>();
    let mut s = Tensor::zeros(&[d, d, n]);
    if n == 0 {
        return Ok(s);
    }
    for i in 0..d {
        for j in 0..d {
            for t in 0..n {
                let mut acc = q.get2(0, i) * k.get2(0, j) * mask.get2(0, t);
                for src in 1..n {
                    acc += q.get2(src, i) * k.get2(src, j) * mask.get2(src, t);
                }
                s.set3(i, j, t, acc);
            }
        }
    }
    Ok(s)
}

/// `𝒮` from running outer-product sums, reordered to `d×d×N`.
pub fn masked_score_streaming<T: Real>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = check_qk("masked_score_streaming", q, k)?;
    let prefix = cum_outer(q, k)?;
    let mut s = Tensor::zeros(&[d, d, n]);
    for t in 0..n {
        for i in 0..d {
            for j in 0..d {
                s.set3(i, j, t, prefix.get3(t, i, j));
            }
        }
    }
    Ok(s)
}

/// Masked Khatri-Rao tensor `𝒳[i,j,k] = 𝒮[j,k,i]·V[i,k]`, shape `N×d×d`.
pub fn masked_kr_tensor<T: Real>(s: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = v.require_matrix("masked_kr_tensor")?;
    if s.shape() != [d, d, n] {
        return Err(Error::shape("masked_kr_tensor", s.shape(), v.shape()));
    }
    let mut x = Tensor::zeros(&[n, d, d]);
    for i in 0..n {
        for j in 0..d {
            for kk in 0..d {
                x.set3(i, j, kk, s.get3(j, kk, i) * v.get2(i, kk));
            }
        }
    }
    Ok(x)
}

/// `1/√(t+1)` row scale: position `t` sums `t+1` outer products.
pub fn position_scale(t: usize) -> f64 {
    1.0 / ((t + 1) as f64).sqrt()
}

/// Causal filtered output `O[i,j] = Σ_m W[j,m]·𝒮[j,m,i]·V[i,m]`.
pub fn masked_output<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &ConvFilter<T>,
    mode: MaskedMode,
) -> Result<Tensor<T>> {
    masked_output_with(q, k, v, w, mode, false)
}

/// [`masked_output`] with optional per-position `1/√(t+1)` scaling of row `t`.
///
/// The scaling is an extension that keeps row magnitudes comparable across
/// positions; it is off by default.
pub fn masked_output_with<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &ConvFilter<T>,
    mode: MaskedMode,
    scale_positions: bool,
) -> Result<Tensor<T>> {
    let (n, d) = check_qk("masked_output", q, k)?;
    if v.shape() != q.shape() {
        return Err(Error::shape("masked_output", q.shape(), v.shape()));
    }
    if w.dim() != d {
        return Err(Error::shape("masked_output", &[d, d], w.weights().shape()));
    }
    let mut out = match mode {
        MaskedMode::Naive => conv_extract(&masked_kr_tensor(&masked_score_naive(q, k)?, v)?, w)?,
        MaskedMode::Streaming => streaming_output(q, k, v, w.weights(), n, d),
    };
    if scale_positions {
        uncounted(|| {
            for t in 0..n {
                let c = T::from_f64(position_scale(t));
                for o in out.row_mut(t) {
                    *o *= c;
                }
            }
        });
    }
    Ok(out)
}

fn streaming_output<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    w: &Tensor<T>,
    n: usize,
    d: usize,
) -> Tensor<T> {
    let mut state = vec![T::zero(); d * d];
    let mut out = Tensor::zeros(&[n, d]);
    for t in 0..n {
        let (qt, kt, vt) = (q.row(t), k.row(t), v.row(t));
        // Accumulate first, then emit: position t sees tokens 0..=t.
        for i in 0..d {
            let row = &mut state[i * d..(i + 1) * d];
            if t == 0 {
                for (g, &kj) in row.iter_mut().zip(kt) {
                    *g = qt[i] * kj;
                }
            } else {
                for (g, &kj) in row.iter_mut().zip(kt) {
                    *g += qt[i] * kj;
                }
            }
        }
        let o = out.row_mut(t);
        if d == 0 {
            continue;
        }
        for j in 0..d {
            let g = &state[j * d..(j + 1) * d];
            let wj = w.row(j);
            let mut acc = wj[0] * g[0] * vt[0];
            for m in 1..d {
                acc += wj[m] * g[m] * vt[m];
            }
            o[j] = acc;
        }
    }
    out
}

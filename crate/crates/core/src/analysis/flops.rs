//! Analytic operation counts.
//!
//! Convention: a dot product of length `L` costs `L` multiplies and `L − 1`
//! adds (accumulation starts from the first product), an elementwise product
//! costs one multiply per entry, and softmax, exponentials, divisions and
//! scalings are not counted. These are exactly the operations the kernels in
//! this crate perform, so every formula here is checked for integer equality
//! against the instrumented [`Counted`](crate::numerics::Counted) scalar.

use serde::Serialize;

use crate::masked::MaskedMode;
use crate::numerics::OpCounts;

/// Count of one named part of an attention computation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Component {
    pub name: &'static str,
    pub multiplies: u64,
    pub adds: u64,
}

impl Component {
    fn new(name: &'static str, multiplies: u64, adds: u64) -> Self {
        Component { name, multiplies, adds }
    }

    /// `m·n` dot products of length `k`, i.e. an `m×k` by `k×n` product.
    fn matmul(name: &'static str, m: u64, k: u64, n: u64) -> Self {
        Component::new(name, m * n * k, m * n * k.saturating_sub(1))
    }

    pub fn total(&self) -> u64 {
        self.multiplies + self.adds
    }
}

/// Per-component and total operation counts, with the configuration echoed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopsReport {
    pub variant: &'static str,
    pub n: u64,
    pub d: u64,
    /// Heads (token-wise) or groups (dimension-wise).
    pub groups: u64,
    /// Filters per group; `0` for the token-wise baseline.
    pub convs: u64,
    pub projections: bool,
    pub components: Vec<Component>,
    pub multiplies: u64,
    pub adds: u64,
    pub total: u64,
}

impl FlopsReport {
    fn build(
        variant: &'static str,
        (n, d, groups, convs): (u64, u64, u64, u64),
        projections: bool,
        components: Vec<Component>,
    ) -> Self {
        let multiplies = components.iter().map(|c| c.multiplies).sum();
        let adds = components.iter().map(|c| c.adds).sum();
        FlopsReport {
            variant,
            n,
            d,
            groups,
            convs,
            projections,
            components,
            multiplies,
            adds,
            total: multiplies + adds,
        }
    }

    pub fn counts(&self) -> OpCounts {
        OpCounts { multiplies: self.multiplies, adds: self.adds }
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }
}

fn cast(v: usize) -> u64 {
    v as u64
}

/// Multi-head token-wise attention over `N` tokens with `h` heads of width `d`.
///
/// Per head: scores `QKᵀ` (`N²` dot products of length `d`) and `P·V`
/// (`N·d` dot products of length `N`). With `projections`, adds the three
/// `N×d_model · d_model×d` input projections per head and the
/// `N×hd · hd×d_model` output projection, where `d_model = h·d`.
pub fn flops_token_attention(n: usize, d: usize, heads: usize, projections: bool) -> FlopsReport {
    let (n, d, h) = (cast(n), cast(d), cast(heads));
    let per_head = |c: Component| Component::new(c.name, c.multiplies * h, c.adds * h);
    let mut parts = vec![
        per_head(Component::matmul("scores", n, d, n)),
        per_head(Component::matmul("weighted_values", n, n, d)),
    ];
    if projections {
        let dm = h * d;
        let proj = Component::matmul("qkv_projections", n, dm, d);
        parts.push(Component::new(proj.name, 3 * h * proj.multiplies, 3 * h * proj.adds));
        parts.push(Component::matmul("output_projection", n, h * d, dm));
    }
    FlopsReport::build("token", (n, d, h, 0), projections, parts)
}

/// Dimension-wise multi-conv attention with `g` groups of `c` filters of width `d`.
///
/// Per group: `S = QᵀK` (`d²` dot products of length `N`). Per filter on the
/// factored path: `W ∘ f(S)` (`d²` multiplies) and `V·(W ∘ f(S))ᵀ`
/// (`N·d` dot products of length `d`). With `projections`, adds three input
/// projections per group and the `N×gcd · gcd×d_model` output projection,
/// where `d_model = g·c·d`.
pub fn flops_dim_attention(n: usize, d: usize, groups: usize, convs: usize, projections: bool) -> FlopsReport {
    let (n, d, g, c) = (cast(n), cast(d), cast(groups), cast(convs));
    let s = Component::matmul("scores", d, n, d);
    let filtered = Component::matmul("filtered_values", n, d, d);
    let mut parts = vec![
        Component::new(s.name, g * s.multiplies, g * s.adds),
        Component::new("filter_product", g * c * d * d, 0),
        Component::new(filtered.name, g * c * filtered.multiplies, g * c * filtered.adds),
    ];
    if projections {
        let dm = g * c * d;
        let proj = Component::matmul("qkv_projections", n, dm, d);
        parts.push(Component::new(proj.name, 3 * g * proj.multiplies, 3 * g * proj.adds));
        parts.push(Component::matmul("output_projection", n, g * c * d, dm));
    }
    FlopsReport::build("dim", (n, d, g, c), projections, parts)
}

/// One causal dimension-wise filter output over `N` tokens of width `d`.
///
/// Naive: every entry of the `d×d×N` score tensor is a length-`N` sum of
/// three-way products `q·k·mask` (`2N` multiplies, `N − 1` adds), then the
/// `N×d×d` masked tensor (one multiply per entry) and the filter contraction.
/// Streaming: one outer product per token into the running state
/// (`N·d²` multiplies, `(N − 1)·d²` adds), then per token and output column a
/// length-`d` sum of three-way products `W·G·v`.
pub fn flops_masked_attention(n: usize, d: usize, mode: MaskedMode) -> FlopsReport {
    let (n, d) = (cast(n), cast(d));
    let parts = match mode {
        MaskedMode::Naive => vec![
            Component::new("masked_scores", 2 * n * n * d * d, d * d * n * n.saturating_sub(1)),
            Component::new("masked_tensor", n * d * d, 0),
            Component::new("filter_contraction", n * d * d, n * d * d.saturating_sub(1)),
        ],
        MaskedMode::Streaming => vec![
            Component::new("running_state", n * d * d, n.saturating_sub(1) * d * d),
            Component::new("filtered_output", 2 * n * d * d, n * d * d.saturating_sub(1)),
        ],
    };
    let variant = match mode {
        MaskedMode::Naive => "masked_naive",
        MaskedMode::Streaming => "masked_streaming",
    };
    FlopsReport::build(variant, (n, d, 1, 1), false, parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_cases() {
        assert_eq!(flops_token_attention(1, 1, 1, false).total, 2);
        assert_eq!(flops_dim_attention(1, 1, 1, 1, false).total, 3);
    }

    #[test]
    fn token_n100_d64() {
        let r = flops_token_attention(100, 64, 1, false);
        // Scores: 100²·(2·64 − 1). Weighted values: 100·64·(2·100 − 1).
        assert_eq!(r.component("scores").unwrap().total(), 1_270_000);
        assert_eq!(r.component("weighted_values").unwrap().total(), 1_273_600);
        assert_eq!(r.total, 2_543_600);
    }

    #[test]
    fn doubling_structure() {
        for n in [3usize, 10, 64] {
            let t1 = flops_token_attention(n, 16, 2, false);
            let t2 = flops_token_attention(2 * n, 16, 2, false);
            let s = |r: &FlopsReport| r.component("scores").unwrap().total();
            assert_eq!(s(&t2), 4 * s(&t1));
            let d1 = flops_dim_attention(n, 16, 2, 3, true).total;
            let d2 = flops_dim_attention(2 * n, 16, 2, 3, true).total;
            let base = flops_dim_attention(1, 16, 2, 3, true).total as i64 * 2
                - flops_dim_attention(2, 16, 2, 3, true).total as i64;
            assert_eq!(2 * d1 as i64 - d2 as i64, base);
        }
    }
}

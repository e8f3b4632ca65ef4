use serde::{Deserialize, Serialize};

use crate::attention::NormMode;
use crate::error::{Error, Result};
use crate::masked::MaskedMode;
use crate::numerics::Precision;

/// Which attention family fills the attention sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// Token-wise scaled dot-product attention with `heads` heads.
    TokenMultiHead { heads: usize },
    /// Dimension-wise attention with `groups` score matrices of `convs` filters each.
    DimMultiConv { groups: usize, convs: usize },
}

impl AttentionKind {
    /// Number of parallel attention outputs concatenated before `W^O`.
    pub fn branches(self) -> usize {
        match self {
            AttentionKind::TokenMultiHead { heads } => heads,
            AttentionKind::DimMultiConv { groups, convs } => groups * convs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionKind {
    #[default]
    Sinusoidal,
    Learned,
}

/// Shape and behaviour of a stack of attention blocks plus its embedding and head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub attention: AttentionKind,
    pub ffn_width: usize,
    /// Score normalization of the dimension-wise encoder.
    pub norm: NormMode,
    pub max_len: usize,
    pub precision: Precision,
    /// Per-branch projection width. `None` keeps the concatenated width at
    /// `d_model`, i.e. `d_model / branches`.
    pub head_dim: Option<usize>,
    pub positions: PositionKind,
    /// Dropout on sublayer outputs during training.
    pub dropout: f64,
    /// Evaluation of the causal dimension-wise sublayer.
    pub masked_mode: MaskedMode,
    /// Scale causal dimension-wise output rows by `1/√(t+1)`.
    pub scale_positions: bool,
}

impl BlockConfig {
    /// A small dimension-wise configuration; adjust fields as needed.
    pub fn tiny(vocab_size: usize) -> Self {
        BlockConfig {
            vocab_size,
            d_model: 8,
            layers: 1,
            attention: AttentionKind::DimMultiConv { groups: 1, convs: 2 },
            ffn_width: 16,
            norm: NormMode::default(),
            max_len: 32,
            precision: Precision::F64,
            head_dim: None,
            positions: PositionKind::Sinusoidal,
            dropout: 0.0,
            masked_mode: MaskedMode::Streaming,
            scale_positions: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
            .unwrap_or(self.d_model / self.attention.branches().max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::precondition("block_config", reason));
        if self.vocab_size == 0 || self.d_model == 0 || self.ffn_width == 0 {
            return fail("vocab_size, d_model and ffn_width must be positive".into());
        }
        if self.max_len == 0 {
            return fail("max_len must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.attention {
            AttentionKind::TokenMultiHead { heads } => {
                if heads == 0 || self.d_model % heads != 0 {
                    return fail(format!("d_model {} not divisible by heads {heads}", self.d_model));
                }
                if self.head_dim.is_some_and(|d| d * heads != self.d_model) {
                    return fail("token attention needs heads × head_dim = d_model".into());
                }
            }
            AttentionKind::DimMultiConv { groups, convs } => {
                if groups == 0 || convs == 0 {
                    return fail("groups and convs must be positive".into());
                }
                if self.head_dim.is_none() && self.d_model % (groups * convs) != 0 {
                    return fail(format!(
                        "d_model {} not divisible by groups × convs = {}; set head_dim",
                        self.d_model,
                        groups * convs
                    ));
                }
                if self.head_dim == Some(0) {
                    return fail("head_dim must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 8,
            steps: 1000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup: 400,
            clip_norm: 1.0,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Err(Error::precondition("train_config", reason.to_string()));
        if self.batch_size == 0 || self.eval_interval == 0 {
            return fail("batch_size and eval_interval must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr must be finite and non-negative");
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return fail("Adam betas must lie in (0, 1)");
        }
        if !(self.eps > 0.0) || self.clip_norm < 0.0 {
            return fail("eps must be positive and clip_norm non-negative");
        }
        Ok(())
    }
}

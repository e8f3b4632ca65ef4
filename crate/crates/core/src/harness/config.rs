use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use super::data::MaskProbs;
use super::vocab::Tokenizer;
use crate::attention::NormMode;
use crate::error::{Error, Result};
use crate::masked::MaskedMode;
use crate::model::{AttentionKind, BlockConfig, PositionKind, TrainConfig};
use crate::numerics::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Task {
    /// Masked-token prediction with a bidirectional encoder.
    #[default]
    Mlm,
    /// Next-token prediction with a causal decoder.
    Clm,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Mlm => "mlm",
            Task::Clm => "clm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionFamily {
    #[default]
    Dim,
    Token,
}

/// Everything a training or evaluation run needs, read from flat
/// `key = value` text. Lines may carry `#` comments.
///
/// `corpus = synthetic` generates `synthetic_bytes` of text from
/// `corpus_seed` instead of reading a file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub corpus: String,
    pub synthetic_bytes: usize,
    pub corpus_seed: u64,
    pub tokenizer: Tokenizer,
    /// Ordinary-token cap; `0` keeps every token.
    pub vocab_cap: usize,
    pub valid_fraction: f64,
    /// Validation windows scored per evaluation; `0` scores all.
    pub eval_windows: usize,
    pub seq_len: usize,
    pub attention: AttentionFamily,
    pub heads: usize,
    pub groups: usize,
    pub convs: usize,
    /// Per-branch width; `0` derives it from `d_model`.
    pub head_dim: usize,
    pub d_model: usize,
    pub layers: usize,
    pub ffn_width: usize,
    pub norm: NormMode,
    pub precision: Precision,
    pub positions: PositionKind,
    pub dropout: f64,
    pub masked_mode: MaskedMode,
    pub scale_positions: bool,
    pub mask: MaskProbs,
    pub train: TrainConfig,
    /// Steps between checkpoints; `0` writes only the final one.
    pub checkpoint_interval: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Mlm,
            corpus: "synthetic".into(),
            synthetic_bytes: 256 * 1024,
            corpus_seed: 0,
            tokenizer: Tokenizer::Char,
            vocab_cap: 0,
            valid_fraction: 0.1,
            eval_windows: 64,
            seq_len: 100,
            attention: AttentionFamily::Dim,
            heads: 8,
            groups: 1,
            convs: 8,
            head_dim: 0,
            d_model: 128,
            layers: 2,
            ffn_width: 256,
            norm: NormMode::default(),
            precision: Precision::F32,
            positions: PositionKind::Sinusoidal,
            dropout: 0.0,
            masked_mode: MaskedMode::Streaming,
            scale_positions: false,
            mask: MaskProbs::default(),
            train: TrainConfig::default(),
            checkpoint_interval: 0,
        }
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn choice<T>(v: &str, parsed: Option<T>, allowed: &str) -> std::result::Result<T, String> {
    parsed.ok_or_else(|| format!("`{v}` is not one of {allowed}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config { line, reason: format!("expected `key = value`, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config { line, reason: format!("duplicate key `{key}`") });
            }
            cfg.set(key, value).map_err(|reason| Error::Config { line, reason })?;
        }
        cfg.train.validate().map_err(|e| Error::Config { line: 0, reason: e.to_string() })?;
        cfg.mask.validate().map_err(|e| Error::Config { line: 0, reason: e.to_string() })?;
        Ok(cfg)
    }

    /// Assigns one key; the error names what was wrong with it.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "task" => {
                self.task = match v {
                    "mlm" => Task::Mlm,
                    "clm" => Task::Clm,
                    _ => return Err(format!("`{v}` is not one of mlm, clm")),
                }
            }
            "corpus" => self.corpus = v.to_string(),
            "synthetic_bytes" => self.synthetic_bytes = num(v)?,
            "corpus_seed" => self.corpus_seed = num(v)?,
            "tokenizer" => self.tokenizer = choice(v, Tokenizer::parse(v), "char, whitespace_word")?,
            "vocab_cap" => self.vocab_cap = num(v)?,
            "valid_fraction" => self.valid_fraction = num(v)?,
            "eval_windows" => self.eval_windows = num(v)?,
            "seq_len" => self.seq_len = num(v)?,
            "attention" => {
                self.attention = match v {
                    "dim" => AttentionFamily::Dim,
                    "token" => AttentionFamily::Token,
                    _ => return Err(format!("`{v}` is not one of dim, token")),
                }
            }
            "heads" => self.heads = num(v)?,
            "groups" => self.groups = num(v)?,
            "convs" => self.convs = num(v)?,
            "head_dim" => self.head_dim = num(v)?,
            "d_model" => self.d_model = num(v)?,
            "layers" => self.layers = num(v)?,
            "ffn_width" => self.ffn_width = num(v)?,
            "norm" => {
                let allowed = "none, scale_inv_sqrt_n, softmax_rows_over_k, softmax_cols_over_j";
                self.norm = choice(v, NormMode::parse(v), allowed)?
            }
            "precision" => self.precision = choice(v, Precision::parse(v), "f32, f64")?,
            "positions" => {
                self.positions = match v {
                    "sinusoidal" => PositionKind::Sinusoidal,
                    "learned" => PositionKind::Learned,
                    _ => return Err(format!("`{v}` is not one of sinusoidal, learned")),
                }
            }
            "dropout" => self.dropout = num(v)?,
            "masked_mode" => self.masked_mode = choice(v, MaskedMode::parse(v), "naive, streaming")?,
            "scale_positions" => self.scale_positions = num(v)?,
            "select_p" => self.mask.select = num(v)?,
            "mask_p" => self.mask.mask = num(v)?,
            "random_p" => self.mask.random = num(v)?,
            "keep_p" => self.mask.keep = num(v)?,
            "seed" => t.seed = num(v)?,
            "batch_size" => t.batch_size = num(v)?,
            "steps" => t.steps = num(v)?,
            "lr" => t.lr = num(v)?,
            "beta1" => t.beta1 = num(v)?,
            "beta2" => t.beta2 = num(v)?,
            "eps" => t.eps = num(v)?,
            "warmup" => t.warmup = num(v)?,
            "clip_norm" => t.clip_norm = num(v)?,
            "eval_interval" => t.eval_interval = num(v)?,
            "checkpoint_interval" => self.checkpoint_interval = num(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let family = match self.attention {
            AttentionFamily::Dim => "dim",
            AttentionFamily::Token => "token",
        };
        let positions = match self.positions {
            PositionKind::Sinusoidal => "sinusoidal",
            PositionKind::Learned => "learned",
        };
        vec![
            ("task", self.task.name().into()),
            ("corpus", self.corpus.clone()),
            ("synthetic_bytes", self.synthetic_bytes.to_string()),
            ("corpus_seed", self.corpus_seed.to_string()),
            ("tokenizer", self.tokenizer.name().into()),
            ("vocab_cap", self.vocab_cap.to_string()),
            ("valid_fraction", self.valid_fraction.to_string()),
            ("eval_windows", self.eval_windows.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("attention", family.into()),
            ("heads", self.heads.to_string()),
            ("groups", self.groups.to_string()),
            ("convs", self.convs.to_string()),
            ("head_dim", self.head_dim.to_string()),
            ("d_model", self.d_model.to_string()),
            ("layers", self.layers.to_string()),
            ("ffn_width", self.ffn_width.to_string()),
            ("norm", self.norm.name().into()),
            ("precision", self.precision.name().into()),
            ("positions", positions.into()),
            ("dropout", self.dropout.to_string()),
            ("masked_mode", self.masked_mode.name().into()),
            ("scale_positions", self.scale_positions.to_string()),
            ("select_p", self.mask.select.to_string()),
            ("mask_p", self.mask.mask.to_string()),
            ("random_p", self.mask.random.to_string()),
            ("keep_p", self.mask.keep.to_string()),
            ("seed", t.seed.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("steps", t.steps.to_string()),
            ("lr", t.lr.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("eps", t.eps.to_string()),
            ("warmup", t.warmup.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("eval_interval", t.eval_interval.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
        ]
    }

    /// `key = value` lines for every setting; parses back to `self`.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Window length fed to the model: `seq_len` inputs, plus one for the
    /// shifted targets of next-token prediction.
    pub fn window_len(&self) -> usize {
        match self.task {
            Task::Mlm => self.seq_len,
            Task::Clm => self.seq_len + 1,
        }
    }

    pub fn block_config(&self, vocab_size: usize) -> Result<BlockConfig> {
        let attention = match self.attention {
            AttentionFamily::Dim => AttentionKind::DimMultiConv { groups: self.groups, convs: self.convs },
            AttentionFamily::Token => AttentionKind::TokenMultiHead { heads: self.heads },
        };
        let block = BlockConfig {
            vocab_size,
            d_model: self.d_model,
            layers: self.layers,
            attention,
            ffn_width: self.ffn_width,
            norm: self.norm,
            max_len: self.seq_len,
            precision: self.precision,
            head_dim: (self.head_dim > 0).then_some(self.head_dim),
            positions: self.positions,
            dropout: self.dropout,
            masked_mode: self.masked_mode,
            scale_positions: self.scale_positions,
        };
        block.validate()?;
        Ok(block)
    }
}

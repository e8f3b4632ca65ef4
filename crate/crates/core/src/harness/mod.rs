//! Data pipeline and command-line driver: corpus and vocabulary, MLM
//! masking, windowed batches, run configuration, the training loop, and the
//! `dimwise` subcommands.

mod cli;
mod config;
mod data;
mod run;
mod synth;
mod vocab;

pub use cli::{cli_dispatch, flops_csv};
pub use config::{AttentionFamily, RunConfig, Task};
pub use data::{
    apply_mlm_mask, clm_batch, mlm_batch, split_stream, unwindow, windows, MaskAction, MaskProbs, MaskStats,
    MaskedBatch, MaskedRow,
};
pub use run::{
    evaluate_checkpoint, metrics_csv, smoothed_train, train, Dataset, MetricRow, RunOutputs, Split, TrainReport,
    METRICS_HEADER,
};
pub use synth::synthetic_text;
pub use vocab::{
    build_corpus, build_corpus_from_text, is_reserved, Corpus, Tokenizer, Vocab, BOS, EOS, MASK, PAD, RESERVED, UNK,
};

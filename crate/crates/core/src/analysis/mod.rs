//! Operation counts for both attention families, checked against
//! instrumented kernels, and wall-clock scaling sweeps.

mod bench;
mod counters;
mod flops;

pub use bench::{bench_sweep, BenchVariant, SweepResult, SweepRow, CSV_HEADER};
pub use counters::{count_dim_attention, count_masked_attention, count_token_attention};
pub use flops::{flops_dim_attention, flops_masked_attention, flops_token_attention, Component, FlopsReport};

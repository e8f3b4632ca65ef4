//! Trains a small dimension-wise encoder on masked characters, writes
//! metrics and a checkpoint, and evaluates the checkpoint again.
//!
//! `cargo run --release --example train_mlm -- [token]` swaps in the
//! token-wise baseline.

use dimwise::harness::{evaluate_checkpoint, smoothed_train, train, AttentionFamily, RunConfig, RunOutputs};

fn main() -> dimwise::Result<()> {
    let mut cfg = RunConfig::parse(include_str!("configs/tiny.cfg"))?;
    if std::env::args().any(|a| a == "token") {
        cfg.attention = AttentionFamily::Token;
    }
    let dir = std::env::temp_dir().join("dimwise-train-mlm");
    let outputs = RunOutputs { ckpt_dir: Some(dir.clone()), progress: true, ..RunOutputs::default() };
    let report = train(&cfg, &outputs)?;
    println!("parameters {}, vocab {}", report.parameters, report.vocab_size);
    let smooth: Vec<String> = smoothed_train(&report.metrics, 100).iter().map(|x| format!("{x:.3}")).collect();
    println!("train NLL per 100 steps: {}", smooth.join(" "));
    println!("valid NLL {:.4} (uniform would be {:.4})", report.final_valid_nll, (report.vocab_size as f64).ln());
    let again = evaluate_checkpoint(&cfg, &dir.join("final.tckpt"))?;
    println!("reloaded checkpoint valid NLL {again:.4}; artifacts in {}", dir.display());
    Ok(())
}

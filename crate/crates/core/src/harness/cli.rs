use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{RunConfig, Task};
use super::run::{evaluate_checkpoint, train, RunOutputs};
use crate::analysis::{bench_sweep, flops_dim_attention, flops_token_attention, BenchVariant, FlopsReport};
use crate::error::{Error, Result};
use crate::model::read_manifest;
use crate::verify;

/// Dimension-wise attention: verification, benchmarks, FLOPs and training.
#[derive(Debug, Parser)]
#[command(name = "dimwise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every property suite; exit 1 if any fails.
    Verify {
        /// Fewer cases per suite.
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Wall-clock sweep over sequence lengths, as CSV.
    Bench {
        /// Comma-separated: token, dim, masked_naive, masked_streaming.
        #[arg(long, value_delimiter = ',', default_value = "token,dim")]
        variants: Vec<String>,
        #[arg(long = "N", value_delimiter = ',', default_value = "1024,2048,4096")]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "64")]
        d: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic operation counts of both attention families, as CSV.
    Flops {
        #[arg(long = "N")]
        n: usize,
        /// Per-head / per-filter width.
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 8)]
        heads: usize,
        #[arg(long, default_value_t = 1)]
        groups: usize,
        #[arg(long, default_value_t = 8)]
        convs: usize,
        /// Leave out the input and output projections.
        #[arg(long)]
        no_projections: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a bidirectional encoder on masked-token prediction.
    TrainMlm(TrainArgs),
    /// Train a causal decoder on next-token prediction.
    TrainClm(TrainArgs),
    /// Validation NLL of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Run config; defaults to the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "checkpoints")]
    ckpt_dir: PathBuf,
    /// Metrics CSV path; defaults to `metrics.csv` in the checkpoint directory.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    quiet: bool,
}

/// Failure of a subcommand, with the exit code it maps to.
enum Failure {
    Usage(String),
    Verification,
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code: 0 on success, 1 on a verification or
/// runtime failure, 2 on usage or config errors.
pub fn cli_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Verification) => 1,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// CSV of per-component and total counts for each report.
pub fn flops_csv(reports: &[FlopsReport]) -> String {
    let mut out = String::from("variant,N,d,groups,convs,projections,component,multiplies,adds,flops\n");
    for r in reports {
        let prefix = format!("{},{},{},{},{},{}", r.variant, r.n, r.d, r.groups, r.convs, r.projections);
        for c in &r.components {
            writeln!(out, "{prefix},{},{},{},{}", c.name, c.multiplies, c.adds, c.total()).expect("write to String");
        }
        writeln!(out, "{prefix},total,{},{},{}", r.multiplies, r.adds, r.total).expect("write to String");
    }
    out
}

fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Verify { quick, seed } => {
            let reports = verify::run_all(quick, seed)?;
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().all(|r| r.passed()) {
                Ok(())
            } else {
                Err(Failure::Verification)
            }
        }
        Command::Bench { variants, ns, d, repeats, seed, out } => {
            let variants = variants
                .iter()
                .map(|v| BenchVariant::parse(v).ok_or_else(|| Failure::Usage(format!("unknown bench variant `{v}`"))))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if repeats < 5 {
                return Err(Failure::Usage("--repeats must be at least 5".into()));
            }
            let sweep = bench_sweep(&variants, &ns, &d, repeats, seed)?;
            emit(&sweep.to_csv(), out.as_deref())?;
            Ok(())
        }
        Command::Flops { n, d, heads, groups, convs, no_projections, out } => {
            let proj = !no_projections;
            let reports = [flops_token_attention(n, d, heads, proj), flops_dim_attention(n, d, groups, convs, proj)];
            emit(&flops_csv(&reports), out.as_deref())?;
            Ok(())
        }
        Command::TrainMlm(args) => train_command(args, Task::Mlm),
        Command::TrainClm(args) => train_command(args, Task::Clm),
        Command::Eval { ckpt, config, seed } => {
            let mut cfg = match config {
                Some(p) => load_config(&p, None)?,
                None => RunConfig::parse(&read_manifest(&ckpt)?.run_config)?,
            };
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let nll = evaluate_checkpoint(&cfg, &ckpt)?;
            println!("split=valid task={} nll={nll:.6}", cfg.task.name());
            Ok(())
        }
    }
}

fn train_command(args: TrainArgs, task: Task) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(&args.config, args.seed)?;
    cfg.task = task;
    cfg.block_config(1).map_err(|e| Failure::Usage(e.to_string()))?;
    let outputs = RunOutputs { ckpt_dir: Some(args.ckpt_dir), metrics: args.metrics, progress: !args.quiet };
    let report = train(&cfg, &outputs)?;
    println!(
        "task={} steps={} vocab={} parameters={} final_valid_nll={:.6}",
        task.name(),
        cfg.train.steps,
        report.vocab_size,
        report.parameters,
        report.final_valid_nll
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(cli_dispatch(["dimwise", "frobnicate"]), 2);
        assert_eq!(cli_dispatch(["dimwise", "flops", "--N", "4", "--d", "2", "--bogus"]), 2);
        assert_eq!(cli_dispatch(["dimwise", "--help"]), 0);
    }

    #[test]
    fn config_errors_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, "colour = blue\n").unwrap();
        let code = cli_dispatch(["dimwise", "train-mlm", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 2);
    }

    #[test]
    fn flops_csv_has_both_variants() {
        let csv = flops_csv(&[flops_token_attention(100, 64, 8, true), flops_dim_attention(100, 64, 1, 8, true)]);
        assert!(csv.lines().any(|l| l.starts_with("token,100,64,8,0,true,total,")));
        assert!(csv.lines().any(|l| l.starts_with("dim,100,64,1,8,true,total,")));
    }
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{RunConfig, Task};
use super::data::{clm_batch, mlm_batch, split_stream, windows};
use super::synth::synthetic_text;
use super::vocab::{build_corpus, build_corpus_from_text, Corpus};
use crate::error::{Error, Result};
use crate::model::{evaluate, load, read_manifest, save, train_step, Adam, Batch, Direction, Model};
use crate::numerics::{Precision, Real, Rng};

const TAG_BATCH: u64 = 11;
const TAG_MASK: u64 = 12;
const TAG_VALID_MASK: u64 = 13;

pub const METRICS_HEADER: &str = "step,split,nll";

/// Tokenized corpus cut into train and validation windows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub train: Vec<Vec<u32>>,
    pub valid: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let cap = (cfg.vocab_cap > 0).then_some(cfg.vocab_cap);
        let corpus = if cfg.corpus == "synthetic" {
            build_corpus_from_text(&synthetic_text(cfg.corpus_seed, cfg.synthetic_bytes), cfg.tokenizer, cap)?
        } else {
            build_corpus(Path::new(&cfg.corpus), cfg.tokenizer, cap)?
        };
        let (train, valid) = split_stream(&corpus.ids, cfg.valid_fraction)?;
        let train = windows(train, cfg.window_len())?;
        let valid = windows(valid, cfg.window_len())?;
        if train.is_empty() {
            return Err(Error::precondition("dataset", "no training windows"));
        }
        Ok(Dataset { corpus, train, valid })
    }

    pub fn vocab_size(&self) -> usize {
        self.corpus.vocab.len()
    }

    fn batch(&self, cfg: &RunConfig, rows: &[&[u32]], tag: u64, counters: &[u64]) -> Result<Batch> {
        Ok(match cfg.task {
            Task::Mlm => mlm_batch(rows, counters, cfg.train.seed, tag, cfg.mask, self.vocab_size())?.to_batch(),
            Task::Clm => clm_batch(rows),
        })
    }

    /// Training batch of 1-based `step`, a pure function of the seed and step.
    pub fn train_batch(&self, cfg: &RunConfig, step: usize) -> Result<Batch> {
        let b = cfg.train.batch_size;
        let mut rng = Rng::fork(cfg.train.seed, TAG_BATCH, step as u64);
        let rows: Vec<&[u32]> = (0..b).map(|_| self.train[rng.below(self.train.len() as u64) as usize].as_slice()).collect();
        let counters: Vec<u64> = (0..b as u64).map(|i| step as u64 * b as u64 + i).collect();
        self.batch(cfg, &rows, TAG_MASK, &counters)
    }

    /// Held-out windows with fixed masks, identical at every evaluation.
    pub fn valid_batch(&self, cfg: &RunConfig) -> Result<Batch> {
        let n = match cfg.eval_windows {
            0 => self.valid.len(),
            k => k.min(self.valid.len()),
        };
        let rows: Vec<&[u32]> = self.valid[..n].iter().map(Vec::as_slice).collect();
        let counters: Vec<u64> = (0..n as u64).collect();
        let batch = self.batch(cfg, &rows, TAG_VALID_MASK, &counters)?;
        if batch.scored() == 0 {
            return Err(Error::precondition("dataset", "validation split has nothing to score"));
        }
        Ok(batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub split: Split,
    pub nll: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{:.6}", r.step, r.split.name(), r.nll).expect("write to String");
    }
    out
}

/// Train NLL averaged over consecutive blocks of `block` steps.
pub fn smoothed_train(rows: &[MetricRow], block: usize) -> Vec<f64> {
    let train: Vec<f64> = rows.iter().filter(|r| r.split == Split::Train).map(|r| r.nll).collect();
    train.chunks_exact(block).map(|c| c.iter().sum::<f64>() / block as f64).collect()
}

/// Where a run writes its artifacts. Nothing is written for `None` paths.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub ckpt_dir: Option<PathBuf>,
    /// Defaults to `metrics.csv` in `ckpt_dir`.
    pub metrics: Option<PathBuf>,
    /// Print progress to stderr at each evaluation.
    pub progress: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: Vec<MetricRow>,
    pub final_valid_nll: f64,
    pub vocab_size: usize,
    pub parameters: usize,
}

fn direction(task: Task) -> Direction {
    match task {
        Task::Mlm => Direction::Bidirectional,
        Task::Clm => Direction::Causal,
    }
}

/// Trains from scratch as configured. Metrics and checkpoints depend only on
/// the configuration, so equal configs give byte-identical artifacts.
pub fn train(cfg: &RunConfig, outputs: &RunOutputs) -> Result<TrainReport> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, outputs),
        Precision::F64 => train_typed::<f64>(cfg, outputs),
    }
}

fn train_typed<T: Real>(cfg: &RunConfig, outputs: &RunOutputs) -> Result<TrainReport> {
    let data = Dataset::load(cfg)?;
    let block = cfg.block_config(data.vocab_size())?;
    let mut model = Model::<T>::new(block, cfg.train.seed)?;
    let mut adam = Adam::new(&model.params);
    let valid = data.valid_batch(cfg)?;
    let dir = direction(cfg.task);
    let text = cfg.to_text();
    let metrics_path = outputs.metrics.clone().or_else(|| outputs.ckpt_dir.as_ref().map(|d| d.join("metrics.csv")));
    if let Some(d) = &outputs.ckpt_dir {
        fs::create_dir_all(d)?;
        let log = format!(
            "{text}# derived\nvocab_size = {}\ntrain_windows = {}\nvalid_windows = {}\nparameters = {}\n",
            data.vocab_size(),
            data.train.len(),
            data.valid.len(),
            model.params.count()
        );
        fs::write(d.join("run.log"), log)?;
    }
    let mut metrics = Vec::new();
    let mut last_valid = f64::NAN;
    let steps = cfg.train.steps;
    for step in 1..=steps {
        let batch = data.train_batch(cfg, step)?;
        if batch.scored() == 0 {
            continue;
        }
        let nll = train_step(&mut model, &mut adam, &batch, dir, &cfg.train)?;
        metrics.push(MetricRow { step, split: Split::Train, nll });
        if step % cfg.train.eval_interval == 0 || step == steps {
            last_valid = evaluate(&model, std::slice::from_ref(&valid), dir)?;
            metrics.push(MetricRow { step, split: Split::Valid, nll: last_valid });
            if outputs.progress {
                eprintln!("step {step:>6}  train {nll:.4}  valid {last_valid:.4}");
            }
        }
        if let Some(d) = &outputs.ckpt_dir {
            if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 {
                save(&d.join(format!("step_{step:06}.tckpt")), &model, step, &text)?;
            }
        }
    }
    if steps == 0 {
        last_valid = evaluate(&model, std::slice::from_ref(&valid), dir)?;
        metrics.push(MetricRow { step: 0, split: Split::Valid, nll: last_valid });
    }
    if let Some(d) = &outputs.ckpt_dir {
        save(&d.join("final.tckpt"), &model, adam.step(), &text)?;
    }
    if let Some(p) = metrics_path {
        if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(p, metrics_csv(&metrics))?;
    }
    Ok(TrainReport {
        metrics,
        final_valid_nll: last_valid,
        vocab_size: data.vocab_size(),
        parameters: model.params.count(),
    })
}

/// Validation NLL of a checkpoint on the held-out split described by `cfg`.
pub fn evaluate_checkpoint(cfg: &RunConfig, ckpt: &Path) -> Result<f64> {
    match read_manifest(ckpt)?.block.precision {
        Precision::F32 => eval_typed::<f32>(cfg, ckpt),
        Precision::F64 => eval_typed::<f64>(cfg, ckpt),
    }
}

fn eval_typed<T: Real>(cfg: &RunConfig, ckpt: &Path) -> Result<f64> {
    let (model, _) = load::<T>(ckpt)?;
    let data = Dataset::load(cfg)?;
    if model.config().vocab_size != data.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "checkpoint vocabulary {} differs from corpus vocabulary {}",
            model.config().vocab_size,
            data.vocab_size()
        )));
    }
    evaluate(&model, &[data.valid_batch(cfg)?], direction(cfg.task))
}

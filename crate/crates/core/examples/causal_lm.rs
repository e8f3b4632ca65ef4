//! Next-character prediction with a causal dimension-wise decoder, followed
//! by greedy continuation of a prompt.

use dimwise::harness::{build_corpus_from_text, synthetic_text, train, RunConfig, RunOutputs, Task, Tokenizer};
use dimwise::model::{decoder_forward, load, Model};

fn main() -> dimwise::Result<()> {
    let mut cfg = RunConfig::parse(include_str!("configs/tiny.cfg"))?;
    cfg.task = Task::Clm;
    // The tiny config learns slowly on purpose; a causal model can go faster.
    cfg.train.lr = 3e-3;
    cfg.train.steps = 1000;
    let dir = std::env::temp_dir().join("dimwise-causal-lm");
    let report = train(&cfg, &RunOutputs { ckpt_dir: Some(dir.clone()), ..RunOutputs::default() })?;
    println!("valid next-char NLL {:.4}", report.final_valid_nll);

    let (model, _): (Model<f32>, _) = load(&dir.join("final.tckpt"))?;
    let corpus = build_corpus_from_text(&synthetic_text(cfg.corpus_seed, cfg.synthetic_bytes), Tokenizer::Char, None)?;
    let mut ids: Vec<u32> = "The ".chars().map(|c| corpus.vocab.id(&c.to_string())).collect();
    while ids.len() < cfg.seq_len {
        let logits = decoder_forward(&ids, &model)?;
        let last = logits.row(ids.len() - 1);
        let next = (0..last.len()).max_by(|&a, &b| last[a].total_cmp(&last[b])).unwrap_or(0);
        ids.push(next as u32);
    }
    let text: String = ids.iter().map(|&i| corpus.vocab.token(i).unwrap_or("?")).collect();
    println!("{}", text.replace("<eos>", "\n"));
    Ok(())
}

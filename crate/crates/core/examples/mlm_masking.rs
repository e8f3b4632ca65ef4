//! Builds a character vocabulary, windows the stream and masks it, then
//! reports how often each masking action fired.

use dimwise::harness::{apply_mlm_mask, build_corpus_from_text, synthetic_text, windows, MaskProbs, MaskStats, Tokenizer};
use dimwise::numerics::Rng;

fn main() -> dimwise::Result<()> {
    let text = synthetic_text(0, 120_000);
    let corpus = build_corpus_from_text(&text, Tokenizer::Char, None)?;
    println!("vocab {} tokens, stream {} ids", corpus.vocab.len(), corpus.ids.len());
    println!("first line: {}", text.lines().next().unwrap_or(""));

    let mut rng = Rng::new(5);
    let mut stats = MaskStats::default();
    let rows = windows(&corpus.ids, 100)?;
    for w in &rows {
        if let Ok(row) = apply_mlm_mask(w, &mut rng, MaskProbs::default(), corpus.vocab.len()) {
            stats.add(&row, w);
        }
    }
    let (m, r, k) = stats.split();
    println!("selected {:.4} of {} eligible tokens", stats.selected_fraction(), stats.eligible);
    println!("mask {m:.4}  random {r:.4}  keep {k:.4}");

    let sample = apply_mlm_mask(&rows[0], &mut rng, MaskProbs::default(), corpus.vocab.len())?;
    let shown: String = sample.inputs.iter().map(|&id| match corpus.vocab.token(id) {
        Some("<mask>") => "_".to_string(),
        Some("<eos>") => "|".to_string(),
        Some(t) => t.to_string(),
        None => "?".to_string(),
    }).collect();
    println!("masked window: {shown}");
    Ok(())
}

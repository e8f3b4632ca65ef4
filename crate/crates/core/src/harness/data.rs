use super::vocab::{is_reserved, MASK, PAD, RESERVED};
use crate::error::{Error, Result};
use crate::grad::IGNORE;
use crate::model::Batch;
use crate::numerics::Rng;

/// Splits `ids` into non-overlapping windows of `len`, padding the last one
/// with PAD. An empty stream yields no windows.
pub fn windows(ids: &[u32], len: usize) -> Result<Vec<Vec<u32>>> {
    if len == 0 {
        return Err(Error::precondition("windows", "window length must be positive"));
    }
    Ok(ids
        .chunks(len)
        .map(|c| {
            let mut w = c.to_vec();
            w.resize(len, PAD);
            w
        })
        .collect())
}

/// Inverse of [`windows`]: concatenates windows and drops trailing PAD of the last.
pub fn unwindow(windows: &[Vec<u32>]) -> Vec<u32> {
    let mut out: Vec<u32> = windows.concat();
    while out.last() == Some(&PAD) {
        out.pop();
    }
    out
}

/// Splits a stream into leading train and trailing validation parts, with
/// `valid_fraction` of the tokens (rounded down) held out.
pub fn split_stream(ids: &[u32], valid_fraction: f64) -> Result<(&[u32], &[u32])> {
    if !(0.0..1.0).contains(&valid_fraction) {
        return Err(Error::precondition("split_stream", format!("valid_fraction {valid_fraction} outside [0, 1)")));
    }
    let held = (ids.len() as f64 * valid_fraction) as usize;
    Ok(ids.split_at(ids.len() - held))
}

/// Selection and three-way replacement probabilities of MLM masking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskProbs {
    pub select: f64,
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for MaskProbs {
    fn default() -> Self {
        MaskProbs { select: 0.15, mask: 0.8, random: 0.1, keep: 0.1 }
    }
}

impl MaskProbs {
    pub fn validate(&self) -> Result<()> {
        let all = [self.select, self.mask, self.random, self.keep];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::precondition("apply_mlm_mask", "probabilities must lie in [0, 1]"));
        }
        if (self.mask + self.random + self.keep - 1.0).abs() > 1e-9 {
            return Err(Error::precondition("apply_mlm_mask", "mask_p + random_p + keep_p must equal 1"));
        }
        Ok(())
    }
}

/// What masking did to one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Untouched,
    Masked,
    Randomized,
    Kept,
}

/// One masked sequence. Targets hold the original token at selected
/// positions and [`IGNORE`] elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedRow {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub actions: Vec<MaskAction>,
}

impl MaskedRow {
    pub fn positions(&self) -> Vec<usize> {
        (0..self.actions.len()).filter(|&i| self.actions[i] != MaskAction::Untouched).collect()
    }
}

/// Independently selects each non-reserved token with probability
/// `probs.select`; a selected token becomes MASK, a uniformly drawn
/// non-reserved id, or stays, in proportions `mask : random : keep`.
///
/// A sequence made only of reserved tokens has nothing to select and is
/// reported as [`Error::EmptyMask`].
pub fn apply_mlm_mask(tokens: &[u32], rng: &mut Rng, probs: MaskProbs, vocab_size: usize) -> Result<MaskedRow> {
    probs.validate()?;
    if tokens.iter().all(|&t| is_reserved(t)) {
        return Err(Error::EmptyMask);
    }
    if vocab_size <= RESERVED as usize {
        return Err(Error::precondition("apply_mlm_mask", "vocabulary has no ordinary tokens"));
    }
    let ordinary = vocab_size as u64 - RESERVED as u64;
    let mut row = MaskedRow {
        inputs: tokens.to_vec(),
        targets: vec![IGNORE; tokens.len()],
        actions: vec![MaskAction::Untouched; tokens.len()],
    };
    for (i, &t) in tokens.iter().enumerate() {
        if is_reserved(t) || rng.uniform() >= probs.select {
            continue;
        }
        row.targets[i] = t;
        let u = rng.uniform();
        row.actions[i] = if u < probs.mask {
            row.inputs[i] = MASK;
            MaskAction::Masked
        } else if u < probs.mask + probs.random {
            row.inputs[i] = RESERVED + rng.below(ordinary) as u32;
            MaskAction::Randomized
        } else {
            MaskAction::Kept
        };
    }
    Ok(row)
}

/// Masked windows of one batch, all of the same length `N`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskedBatch {
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
    pub mask_flags: Vec<Vec<bool>>,
    pub pad_flags: Vec<Vec<bool>>,
}

impl MaskedBatch {
    pub fn push(&mut self, row: MaskedRow, window: &[u32]) {
        self.mask_flags.push(row.actions.iter().map(|&a| a != MaskAction::Untouched).collect());
        self.pad_flags.push(window.iter().map(|&t| t == PAD).collect());
        self.inputs.push(row.inputs);
        self.targets.push(row.targets);
    }

    /// Model batch with trailing padding trimmed from every row.
    pub fn to_batch(&self) -> Batch {
        let mut batch = Batch::default();
        for ((inp, tgt), pad) in self.inputs.iter().zip(&self.targets).zip(&self.pad_flags) {
            let len = pad.iter().position(|&p| p).unwrap_or(pad.len());
            batch.inputs.push(inp[..len].to_vec());
            batch.targets.push(tgt[..len].to_vec());
        }
        batch
    }
}

/// Masks each window with its own stream `fork(seed, tag, counters[i])`.
/// Windows with nothing maskable are skipped.
pub fn mlm_batch(
    windows: &[&[u32]],
    counters: &[u64],
    seed: u64,
    tag: u64,
    probs: MaskProbs,
    vocab_size: usize,
) -> Result<MaskedBatch> {
    let mut out = MaskedBatch::default();
    for (w, &c) in windows.iter().zip(counters) {
        match apply_mlm_mask(w, &mut Rng::fork(seed, tag, c), probs, vocab_size) {
            Ok(row) => out.push(row, w),
            Err(Error::EmptyMask) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Next-token batch from windows of length `N + 1`: inputs are the first
/// `N` ids, targets the last `N`. Padding is trimmed.
pub fn clm_batch(windows: &[&[u32]]) -> Batch {
    let mut batch = Batch::default();
    for w in windows {
        let real = w.iter().position(|&t| t == PAD).unwrap_or(w.len());
        if real < 2 {
            continue;
        }
        batch.inputs.push(w[..real - 1].to_vec());
        batch.targets.push(w[1..real].to_vec());
    }
    batch
}

/// Tallies of masking actions over many rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MaskStats {
    pub eligible: usize,
    pub masked: usize,
    pub randomized: usize,
    pub kept: usize,
}

impl MaskStats {
    pub fn add(&mut self, row: &MaskedRow, original: &[u32]) {
        self.eligible += original.iter().filter(|&&t| !is_reserved(t)).count();
        for a in &row.actions {
            match a {
                MaskAction::Masked => self.masked += 1,
                MaskAction::Randomized => self.randomized += 1,
                MaskAction::Kept => self.kept += 1,
                MaskAction::Untouched => {}
            }
        }
    }

    pub fn selected(&self) -> usize {
        self.masked + self.randomized + self.kept
    }

    pub fn selected_fraction(&self) -> f64 {
        self.selected() as f64 / self.eligible as f64
    }

    /// Fractions of selected positions that were masked, randomized, kept.
    pub fn split(&self) -> (f64, f64, f64) {
        let s = self.selected() as f64;
        (self.masked as f64 / s, self.randomized as f64 / s, self.kept as f64 / s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::vocab::{EOS, UNK};

    #[test]
    fn windowing_is_lossless() {
        let ids: Vec<u32> = (5..28).collect();
        for len in [1, 4, 7, 23, 30] {
            let w = windows(&ids, len).unwrap();
            assert!(w.iter().all(|x| x.len() == len));
            assert_eq!(unwindow(&w), ids);
        }
    }

    #[test]
    fn select_zero_leaves_input() {
        let toks = [5, 6, EOS, 7];
        let probs = MaskProbs { select: 0.0, ..MaskProbs::default() };
        let row = apply_mlm_mask(&toks, &mut Rng::new(1), probs, 10).unwrap();
        assert_eq!(row.inputs, toks);
        assert!(row.positions().is_empty());
    }

    #[test]
    fn select_all_masks_every_ordinary_token() {
        let toks = [5, 6, EOS, 7, UNK];
        let probs = MaskProbs { select: 1.0, mask: 1.0, random: 0.0, keep: 0.0 };
        let row = apply_mlm_mask(&toks, &mut Rng::new(1), probs, 10).unwrap();
        assert_eq!(row.inputs, [MASK, MASK, EOS, MASK, UNK]);
        assert_eq!(row.targets, [5, 6, IGNORE, 7, IGNORE]);
    }

    #[test]
    fn only_reserved_is_flagged() {
        let r = apply_mlm_mask(&[PAD, EOS, UNK], &mut Rng::new(0), MaskProbs::default(), 10);
        assert!(matches!(r, Err(Error::EmptyMask)));
    }

    #[test]
    fn bad_split_rejected() {
        let probs = MaskProbs { mask: 0.5, ..MaskProbs::default() };
        assert!(apply_mlm_mask(&[5], &mut Rng::new(0), probs, 10).is_err());
    }

    #[test]
    fn clm_shifts_by_one() {
        let b = clm_batch(&[&[5, 6, 7, PAD]]);
        assert_eq!(b.inputs, [vec![5, 6]]);
        assert_eq!(b.targets, [vec![6, 7]]);
    }

    #[test]
    fn padding_never_selected() {
        let w = [5, 6, PAD, PAD];
        let probs = MaskProbs { select: 1.0, ..MaskProbs::default() };
        let b = mlm_batch(&[&w], &[0], 3, 9, probs, 10).unwrap();
        assert_eq!(b.mask_flags[0], [true, true, false, false]);
        assert_eq!(b.to_batch().inputs[0].len(), 2);
    }
}

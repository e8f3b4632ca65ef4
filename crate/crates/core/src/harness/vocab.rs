use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const BOS: u32 = 3;
pub const EOS: u32 = 4;
/// Number of reserved ids; ordinary tokens start here.
pub const RESERVED: u32 = 5;

const RESERVED_NAMES: [&str; RESERVED as usize] = ["<pad>", "<unk>", "<mask>", "<bos>", "<eos>"];

pub fn is_reserved(id: u32) -> bool {
    id < RESERVED
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tokenizer {
    /// One token per Unicode scalar value.
    #[default]
    Char,
    /// Tokens are maximal runs of non-whitespace.
    WhitespaceWord,
}

impl Tokenizer {
    pub fn name(self) -> &'static str {
        match self {
            Tokenizer::Char => "char",
            Tokenizer::WhitespaceWord => "whitespace_word",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Tokenizer::Char, Tokenizer::WhitespaceWord].into_iter().find(|t| t.name() == s)
    }

    /// Splits `text` into tokens, with `None` marking each newline.
    fn split(self, text: &str) -> Vec<Option<String>> {
        let mut out = Vec::new();
        let mut lines = text.split('\n').peekable();
        while let Some(line) = lines.next() {
            match self {
                Tokenizer::Char => out.extend(line.chars().map(|c| Some(c.to_string()))),
                Tokenizer::WhitespaceWord => out.extend(line.split_whitespace().map(|w| Some(w.to_string()))),
            }
            if lines.peek().is_some() {
                out.push(None);
            }
        }
        out
    }
}

/// Token ↔ id map with ids `0..5` reserved for PAD, UNK, MASK, BOS, EOS.
///
/// Ordinary tokens are numbered by descending corpus frequency, ties broken
/// lexicographically, so the same text always yields the same vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Keeps at most `cap` ordinary tokens (`None` keeps all).
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, cap: Option<usize>) -> Self {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for t in tokens {
            *freq.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap.unwrap_or(usize::MAX));
        let tokens: Vec<String> = RESERVED_NAMES
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True when the vocabulary holds only the reserved entries.
    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED as usize
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Ordinary tokens in id order.
    pub fn ordinary(&self) -> &[String] {
        &self.tokens[RESERVED as usize..]
    }
}

/// A vocabulary and the id stream of the text it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub ids: Vec<u32>,
}

/// Tokenizes `text`, builds a vocabulary, and encodes the text. Newlines
/// become EOS; tokens outside a capped vocabulary become UNK.
pub fn build_corpus_from_text(text: &str, tokenizer: Tokenizer, vocab_cap: Option<usize>) -> Result<Corpus> {
    let pieces = tokenizer.split(text);
    if pieces.iter().all(Option::is_none) {
        return Err(Error::Corpus { path: "<text>".into(), reason: "no tokens".into() });
    }
    let vocab = Vocab::build(pieces.iter().flatten().map(String::as_str), vocab_cap);
    let ids = pieces
        .iter()
        .map(|p| p.as_deref().map_or(EOS, |t| vocab.id(t)))
        .collect();
    Ok(Corpus { vocab, ids })
}

/// [`build_corpus_from_text`] on a UTF-8 file.
pub fn build_corpus(path: &Path, tokenizer: Tokenizer, vocab_cap: Option<usize>) -> Result<Corpus> {
    let err = |reason: String| Error::Corpus { path: path.to_path_buf(), reason };
    let bytes = fs::read(path).map_err(|e| err(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| err(e.to_string()))?;
    build_corpus_from_text(&text, tokenizer, vocab_cap).map_err(|_| err("empty corpus".into()))
}

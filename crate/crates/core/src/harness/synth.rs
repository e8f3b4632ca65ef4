//! Deterministic English-like text for runs without a corpus file.
//!
//! Sentences are drawn from a handful of clause templates over a small
//! lexicon with Zipf-like word weights, so the text has realistic character
//! statistics and some local structure without shipping a dataset.

use crate::numerics::Rng;

const TAG_SYNTH: u64 = 0x5e7;

const DETERMINERS: &[&str] = &["the", "a", "this", "that", "every", "some", "one", "no", "his", "her", "their", "our"];
const ADJECTIVES: &[&str] = &[
    "old", "small", "quiet", "bright", "long", "dark", "early", "cold", "open", "green", "heavy", "simple", "strange",
    "narrow", "warm", "broken", "distant", "gentle", "plain", "sudden",
];
const NOUNS: &[&str] = &[
    "house", "river", "city", "man", "woman", "child", "road", "market", "letter", "morning", "window", "garden",
    "station", "teacher", "village", "bridge", "story", "door", "table", "country", "winter", "harbor", "field",
    "office", "train", "friend", "machine", "question", "answer", "mountain", "paper", "voice", "hand", "week",
];
const VERBS: &[&str] = &[
    "saw", "found", "opened", "left", "followed", "carried", "watched", "built", "crossed", "wrote", "heard",
    "remembered", "closed", "reached", "painted", "sold", "kept", "lost", "needed", "visited",
];
const INTRANSITIVE: &[&str] = &["waited", "slept", "returned", "laughed", "stayed", "arrived", "worked", "fell", "smiled"];
const ADVERBS: &[&str] = &["slowly", "again", "often", "never", "quickly", "later", "still", "always", "almost"];
const PREPOSITIONS: &[&str] = &["in", "near", "across", "behind", "under", "over", "by", "through", "along", "past"];
const CONJUNCTIONS: &[&str] = &["and", "but", "so", "while", "because", "when"];
const NAMES: &[&str] = &["Anna", "Peter", "Maria", "John", "Clara", "Tom", "Elena", "Mark"];

/// Index drawn with weight `1/(i+1)`.
fn zipf(rng: &mut Rng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let mut u = rng.uniform() * total;
    for i in 0..n {
        u -= 1.0 / (i + 1) as f64;
        if u < 0.0 {
            return i;
        }
    }
    n - 1
}

fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    words[zipf(rng, words.len())]
}

fn noun_phrase(rng: &mut Rng, out: &mut Vec<String>) {
    if rng.uniform() < 0.15 {
        out.push(pick(rng, NAMES).into());
        return;
    }
    out.push(pick(rng, DETERMINERS).into());
    if rng.uniform() < 0.4 {
        out.push(pick(rng, ADJECTIVES).into());
    }
    let noun = pick(rng, NOUNS);
    out.push(if rng.uniform() < 0.2 { format!("{noun}s") } else { noun.into() });
}

fn clause(rng: &mut Rng, out: &mut Vec<String>) {
    noun_phrase(rng, out);
    if rng.uniform() < 0.2 {
        out.push(pick(rng, ADVERBS).into());
    }
    if rng.uniform() < 0.65 {
        out.push(pick(rng, VERBS).into());
        noun_phrase(rng, out);
    } else {
        out.push(pick(rng, INTRANSITIVE).into());
    }
    if rng.uniform() < 0.45 {
        out.push(pick(rng, PREPOSITIONS).into());
        noun_phrase(rng, out);
    }
}

fn sentence(rng: &mut Rng) -> String {
    let mut words = Vec::new();
    clause(rng, &mut words);
    if rng.uniform() < 0.35 {
        let last = words.pop().unwrap_or_default();
        words.push(format!("{last},"));
        words.push(pick(rng, CONJUNCTIONS).into());
        clause(rng, &mut words);
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        s = first.to_uppercase() + &s[1..];
    }
    s.push(if rng.uniform() < 0.9 { '.' } else { '?' });
    s
}

/// At least `min_bytes` of text from `seed`: lines of a few sentences each.
pub fn synthetic_text(seed: u64, min_bytes: usize) -> String {
    let mut rng = Rng::fork(seed, TAG_SYNTH, 0);
    let mut text = String::with_capacity(min_bytes + 256);
    while text.len() < min_bytes {
        let n = 1 + rng.below(4) as usize;
        let line: Vec<String> = (0..n).map(|_| sentence(&mut rng)).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let a = synthetic_text(3, 10_000);
        assert!(a.len() >= 10_000);
        assert_eq!(a, synthetic_text(3, 10_000));
        assert_ne!(a, synthetic_text(4, 10_000));
        assert!(a.is_ascii());
    }
}

//! Seeded templated corpora with known structure, for end-to-end checks.

use std::collections::{BTreeMap, HashSet};

use crate::data::Instance;
use crate::embedding::{EmbeddingTable, OovPolicy};
use crate::rng::SeededRng;
use crate::task::TaskSpec;

pub const FILLERS: [&str; 40] = [
    "the", "a", "today", "we", "went", "to", "store", "after", "work", "my", "friend", "said",
    "that", "it", "was", "time", "for", "dinner", "and", "then", "walked", "home", "in", "rain",
    "with", "neighbor", "who", "talked", "about", "weather", "news", "train", "late", "again",
    "morning", "coffee", "office", "meeting", "phone", "call",
];

pub const JOY_WORDS: [&str; 5] = ["happy", "glad", "delighted", "joyful", "cheerful"];

/// Keyword families, one per representation source, each split into words
/// that signal the positive class and words that signal the negative class.
pub const FAMILY_WORDS: [([&str; 3], [&str; 3]); 4] = [
    (["sunny", "bright", "warm"], ["gloomy", "dark", "cold"]),
    (["win", "gain", "rise"], ["lose", "drop", "fall"]),
    (["calm", "gentle", "soft"], ["harsh", "loud", "rough"]),
    (["fresh", "sweet", "tasty"], ["stale", "sour", "bland"]),
];

pub fn keyword_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec::classification("emotion", ["neutral", "joy"]).expect("two classes"),
        TaskSpec::regression("intensity"),
    ]
}

pub fn family_tasks() -> Vec<TaskSpec> {
    vec![TaskSpec::classification("polarity", ["negative", "positive"]).expect("two classes")]
}

fn sentence(rng: &mut SeededRng, len: usize, keywords: &[&str]) -> String {
    let mut words: Vec<&str> = (0..len)
        .map(|_| FILLERS[rng.below(FILLERS.len())])
        .collect();
    let mut slots: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut slots);
    for (slot, kw) in slots.iter().zip(keywords) {
        words[*slot] = kw;
    }
    words.join(" ")
}

/// `n` filler sentences; about half contain one to five joy keywords. The
/// class is joy exactly when a keyword is present and the intensity is the
/// keyword count over five.
pub fn keyword_corpus(n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|i| {
            let count = if rng.bernoulli(0.5) {
                1 + rng.below(5)
            } else {
                0
            };
            let len = (6 + rng.below(7)).max(count);
            let kws: Vec<&str> = (0..count)
                .map(|_| JOY_WORDS[rng.below(JOY_WORDS.len())])
                .collect();
            let label = if count > 0 { "joy" } else { "neutral" };
            Instance {
                id: format!("kw{i:04}"),
                text: sentence(&mut rng, len, &kws),
                label: Some(label.to_string()),
                scores: BTreeMap::from([("intensity".to_string(), count.min(5) as f64 / 5.0)]),
            }
        })
        .collect()
}

/// Each sentence carries one keyword from a single randomly chosen family;
/// its polarity is the class. Instance ids record the family.
pub fn family_corpus(n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|i| {
            let family = rng.below(FAMILY_WORDS.len());
            let positive = rng.bernoulli(0.5);
            let (pos, neg) = FAMILY_WORDS[family];
            let pool = if positive { pos } else { neg };
            let kw = pool[rng.below(pool.len())];
            let len = 6 + rng.below(7);
            Instance {
                id: format!("f{family}-{i:04}"),
                text: sentence(&mut rng, len, &[kw]),
                label: Some(if positive { "positive" } else { "negative" }.to_string()),
                scores: BTreeMap::new(),
            }
        })
        .collect()
}

/// Seeded uniform(-1, 1) vectors for `vocab`, in order.
pub fn random_embeddings<'a>(
    vocab: impl IntoIterator<Item = &'a str>,
    dim: usize,
    seed: u64,
) -> EmbeddingTable {
    let mut rng = SeededRng::new(seed);
    let mut table = EmbeddingTable::new(dim, OovPolicy::Zero);
    let mut seen = HashSet::new();
    for w in vocab {
        if seen.insert(w) {
            let v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
            table.insert(w, &v).expect("dim matches");
        }
    }
    table
}

/// Fillers and joy keywords.
pub fn keyword_embeddings(dim: usize, seed: u64) -> EmbeddingTable {
    random_embeddings(FILLERS.iter().chain(&JOY_WORDS).copied(), dim, seed)
}

/// Fillers plus the words of one family only; every other family's keywords
/// fall out of vocabulary and embed as zeros.
pub fn family_embeddings(family: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let (pos, neg) = FAMILY_WORDS[family];
    let all = random_embeddings(
        FILLERS.iter().copied().chain(
            FAMILY_WORDS
                .iter()
                .flat_map(|(p, n)| p.iter().chain(n).copied()),
        ),
        dim,
        seed,
    );
    let mut table = EmbeddingTable::new(dim, OovPolicy::Zero);
    for w in FILLERS.iter().chain(&pos).chain(&neg) {
        table
            .insert(*w, all.lookup(w).expect("in vocab"))
            .expect("dim matches");
    }
    table
}

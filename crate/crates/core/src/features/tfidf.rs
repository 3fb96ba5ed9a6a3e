//! Word and character n-gram tf-idf with smoothed idf and L2 normalization.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub const DEFAULT_MAX_FEATURES: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NgramMode {
    /// Token n-grams of the tokenizer output, lengths 1 to 3.
    Word,
    /// Character n-grams of the lowercased text (spaces included), lengths 3 to 5.
    Char,
}

impl NgramMode {
    pub fn range(self) -> (usize, usize) {
        match self {
            NgramMode::Word => (1, 3),
            NgramMode::Char => (3, 5),
        }
    }
}

/// Sparse row: `(column, value)` pairs sorted by column.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfVectorizer {
    mode: NgramMode,
    columns: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    fingerprint: u64,
}

/// N-gram multiset of one document under `mode`.
pub fn ngram_counts(text: &str, mode: NgramMode) -> BTreeMap<String, usize> {
    match mode {
        NgramMode::Word => word_ngram_counts(&tokenize(text)),
        NgramMode::Char => {
            let chars: Vec<char> = text.to_lowercase().chars().collect();
            let (lo, hi) = mode.range();
            let mut counts = BTreeMap::new();
            for n in lo..=hi {
                for w in chars.windows(n) {
                    *counts.entry(w.iter().collect::<String>()).or_insert(0) += 1;
                }
            }
            counts
        }
    }
}

pub fn word_ngram_counts(tokens: &[String]) -> BTreeMap<String, usize> {
    let (lo, hi) = NgramMode::Word.range();
    let mut counts = BTreeMap::new();
    for n in lo..=hi {
        for w in tokens.windows(n) {
            *counts.entry(w.join(" ")).or_insert(0) += 1;
        }
    }
    counts
}

impl TfIdfVectorizer {
    pub fn fit(corpus: &[&str], mode: NgramMode) -> Result<Self> {
        Self::fit_capped(corpus, mode, DEFAULT_MAX_FEATURES)
    }

    /// Keeps at most `max_features` n-grams, highest document frequency first,
    /// ties broken lexicographically. Columns are in lexicographic order.
    pub fn fit_capped(corpus: &[&str], mode: NgramMode, max_features: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("cannot fit tf-idf on an empty corpus".into()));
        }
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut hash_input = Vec::new();
        for doc in corpus {
            for gram in ngram_counts(doc, mode).into_keys() {
                *df.entry(gram).or_insert(0) += 1;
            }
            hash_input.extend_from_slice(doc.as_bytes());
            hash_input.push(0x1e);
        }
        let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_features);
        ranked.sort_by(|a, b| a.0.cmp(&b.0));

        let n = corpus.len() as f64;
        let idf = ranked
            .iter()
            .map(|(_, d)| ((1.0 + n) / (1.0 + *d as f64)).ln() + 1.0)
            .collect();
        let columns: Vec<String> = ranked.into_iter().map(|(g, _)| g).collect();
        let mut out = Self {
            mode,
            columns,
            index: HashMap::new(),
            idf,
            fingerprint: fnv1a(&hash_input),
        };
        out.rebuild_index();
        Ok(out)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), i))
            .collect();
    }

    /// Restores the lookup index after deserialization.
    pub fn reindexed(mut self) -> Self {
        self.rebuild_index();
        self
    }

    pub fn mode(&self) -> NgramMode {
        self.mode
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn column_of(&self, gram: &str) -> Option<usize> {
        self.index.get(gram).copied()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn transform(&self, text: &str) -> SparseRow {
        self.weigh(ngram_counts(text, self.mode))
    }

    /// Word-mode transform of an already tokenized document.
    pub fn transform_tokens(&self, tokens: &[String]) -> SparseRow {
        debug_assert_eq!(self.mode, NgramMode::Word);
        self.weigh(word_ngram_counts(tokens))
    }

    fn weigh(&self, counts: BTreeMap<String, usize>) -> SparseRow {
        let mut row: SparseRow = counts
            .into_iter()
            .filter_map(|(g, c)| {
                self.index
                    .get(&g)
                    .map(|&col| (col, c as f64 * self.idf[col]))
            })
            .collect();
        row.sort_by_key(|&(c, _)| c);
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        row
    }

    pub fn transform_dense(&self, text: &str) -> Vec<f64> {
        densify(&self.transform(text), self.width())
    }
}

pub fn densify(row: &[(usize, f64)], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for &(c, v) in row {
        out[c] = v;
    }
    out
}

//! Frozen word-embedding table with an out-of-vocabulary policy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{fnv1a, SeededRng};
use crate::tensor::Tensor;

pub const PAD_TOKEN: &str = "<pad>";
pub const EMBEDDING_DIM: usize = 300;
pub const DEFAULT_MAX_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OovPolicy {
    Zero,
    /// Uniform(-0.05, 0.05) vector derived from the token text and the seed,
    /// so the same token always maps to the same vector.
    SeededUniform {
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    dim: usize,
    rows: Vec<f64>,
    oov: OovPolicy,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov: OovPolicy) -> Self {
        Self {
            vocab: HashMap::new(),
            dim,
            rows: Vec::new(),
            oov,
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dims(&[self.dim], &[vector.len()], "embedding row"));
        }
        let token = token.into();
        match self.vocab.get(&token) {
            Some(&row) => self.rows[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.vocab.insert(token, self.vocab.len());
                self.rows.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn set_oov_policy(&mut self, oov: OovPolicy) {
        self.oov = oov;
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    /// The stored row for a known token.
    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.vocab
            .get(token)
            .map(|&r| &self.rows[r * self.dim..(r + 1) * self.dim])
    }

    /// Row for any token: stored vector, zero for the pad token, otherwise the
    /// OOV policy.
    pub fn vector(&self, token: &str) -> Vec<f64> {
        if token == PAD_TOKEN {
            return vec![0.0; self.dim];
        }
        if let Some(row) = self.lookup(token) {
            return row.to_vec();
        }
        match self.oov {
            OovPolicy::Zero => vec![0.0; self.dim],
            OovPolicy::SeededUniform { seed } => {
                let mut rng = SeededRng::new(seed ^ fnv1a(token.as_bytes()));
                (0..self.dim).map(|_| rng.uniform(-0.05, 0.05)).collect()
            }
        }
    }

    /// `[V, dim]` matrix of stored rows, `None` for an empty table.
    pub fn matrix(&self) -> Option<Tensor> {
        if self.is_empty() {
            return None;
        }
        Tensor::new(self.rows.clone(), vec![self.len(), self.dim]).ok()
    }

    /// Tokens sorted by row index.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out: Vec<(&str, usize)> =
            self.vocab.iter().map(|(t, &i)| (t.as_str(), i)).collect();
        out.sort_by_key(|&(_, i)| i);
        out.into_iter().map(|(t, _)| t).collect()
    }
}

/// Truncates on the right and pads on the left to exactly `max_len` tokens.
/// An empty input becomes a single pad token before padding.
pub fn fit_length(tokens: &[String], max_len: usize) -> Vec<&str> {
    let kept: Vec<&str> = tokens.iter().take(max_len).map(String::as_str).collect();
    let mut out = vec![PAD_TOKEN; max_len.saturating_sub(kept.len().max(1))];
    if kept.is_empty() {
        out.push(PAD_TOKEN);
    } else {
        out.extend(kept);
    }
    out
}

/// `[max_len, dim]` embedding matrix for one token sequence.
pub fn embed(tokens: &[String], table: &EmbeddingTable, max_len: usize) -> Tensor {
    let seq = fit_length(tokens, max_len.max(1));
    let mut data = Vec::with_capacity(seq.len() * table.dim());
    for tok in &seq {
        data.extend(table.vector(tok));
    }
    Tensor::new(data, vec![seq.len(), table.dim()]).expect("non-empty sequence")
}

/// Stacks several sequences into the `[batch*max_len, dim]` layout.
pub fn embed_batch(batch: &[&[String]], table: &EmbeddingTable, max_len: usize) -> Tensor {
    let mut data = Vec::with_capacity(batch.len() * max_len * table.dim());
    for tokens in batch {
        data.extend(embed(tokens, table, max_len).into_data());
    }
    Tensor::new(data, vec![batch.len() * max_len, table.dim()]).expect("non-empty batch")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn known_token_row() {
        let mut table = EmbeddingTable::new(3, OovPolicy::Zero);
        table.insert("joy", &[1.0, 2.0, 3.0]).unwrap();
        let e = embed(&toks(&["joy"]), &table, 1);
        assert_eq!(e.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn oov_zero_and_pad_zero() {
        let table = EmbeddingTable::new(2, OovPolicy::Zero);
        let e = embed(&toks(&["unknown"]), &table, 3);
        assert_eq!(e.shape(), &[3, 2]);
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_oov_is_stable() {
        let table = EmbeddingTable::new(4, OovPolicy::SeededUniform { seed: 11 });
        let a = table.vector("zzz");
        let b = table.vector("zzz");
        assert_eq!(a, b);
        assert_ne!(a, table.vector("yyy"));
        assert!(a.iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn left_pad_right_truncate() {
        assert_eq!(
            fit_length(&toks(&["a", "b"]), 4),
            vec![PAD_TOKEN, PAD_TOKEN, "a", "b"]
        );
        assert_eq!(fit_length(&toks(&["a", "b", "c"]), 2), vec!["a", "b"]);
        assert_eq!(fit_length(&[], 2), vec![PAD_TOKEN, PAD_TOKEN]);
        assert_eq!(fit_length(&[], 1), vec![PAD_TOKEN]);
    }

    #[test]
    fn wrong_width_rejected() {
        let mut table = EmbeddingTable::new(3, OovPolicy::Zero);
        assert!(table.insert("x", &[1.0]).is_err());
    }
}

//! Hand-crafted feature vector: word and character tf-idf, tf-idf weighted
//! embedding average, lexicon aggregates and valence scores, plus the MLP that
//! projects the raw vector down to 128 values.

pub mod lexicon;
pub mod tfidf;
pub mod tokenize;
pub mod vader;

use crate::autodiff::{Activation, Tape, Var};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::layers::{Dense, REPRESENTATION_WIDTH};
use crate::params::ParamSet;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use lexicon::{lexicon_features, Lexicon, LexiconKind, LexiconSet};
pub use tfidf::{NgramMode, TfIdfVectorizer};
pub use tokenize::{tokenize, tokenize_cased};
pub use vader::{vader_score, VaderScores, ValenceScorer};

pub const PROJECTOR_HIDDEN: usize = 256;
pub const VADER_WIDTH: usize = 4;

/// `Σ w·e / Σ w` over `(weight, embedding)` pairs; falls back to the plain mean
/// when every weight is zero and to zeros when there are no pairs.
pub fn weighted_average(pairs: &[(f64, &[f64])], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if pairs.is_empty() {
        return out;
    }
    let total: f64 = pairs.iter().map(|(w, _)| w).sum();
    let (norm, uniform) = if total == 0.0 {
        (pairs.len() as f64, true)
    } else {
        (total, false)
    };
    for (w, e) in pairs {
        let w = if uniform { 1.0 } else { *w };
        out.iter_mut().zip(e.iter()).for_each(|(o, x)| *o += w * x);
    }
    out.iter_mut().for_each(|o| *o /= norm);
    out
}

/// Average of the embeddings of in-table tokens, weighted by each token's
/// tf-idf value in this document. Repeated tokens count once (their tf is
/// already in the weight); tokens outside the tf-idf vocabulary weigh zero.
pub fn weighted_embedding_average(
    tokens: &[String],
    table: &EmbeddingTable,
    vectorizer: &TfIdfVectorizer,
) -> Tensor {
    let row = vectorizer.transform_tokens(tokens);
    let weight_of = |tok: &str| {
        vectorizer
            .column_of(tok)
            .and_then(|c| row.iter().find(|&&(col, _)| col == c).map(|&(_, v)| v))
            .unwrap_or(0.0)
    };
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    let mut all_zero_pairs = Vec::new();
    for tok in tokens {
        let Some(e) = table.lookup(tok) else { continue };
        all_zero_pairs.push((0.0, e));
        if seen.insert(tok.as_str()) {
            pairs.push((weight_of(tok), e));
        }
    }
    let total: f64 = pairs.iter().map(|(w, _)| w).sum();
    let data = if total == 0.0 {
        // plain mean over every embeddable occurrence
        weighted_average(&all_zero_pairs, table.dim())
    } else {
        weighted_average(&pairs, table.dim())
    };
    Tensor::new(data, vec![table.dim()]).expect("positive embedding dim")
}

/// Fitted state for raw feature extraction.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub word: TfIdfVectorizer,
    pub chars: TfIdfVectorizer,
    pub lexicons: LexiconSet,
    pub scorer: ValenceScorer,
    pub embedding_dim: usize,
}

impl FeatureExtractor {
    /// Fits both vectorizers on `corpus` (the training texts only).
    pub fn fit(corpus: &[&str], lexicons: LexiconSet, embedding_dim: usize) -> Result<Self> {
        Ok(Self {
            word: TfIdfVectorizer::fit(corpus, NgramMode::Word)?,
            chars: TfIdfVectorizer::fit(corpus, NgramMode::Char)?,
            scorer: ValenceScorer::from_lexicons(&lexicons),
            lexicons,
            embedding_dim,
        })
    }

    pub fn width(&self) -> usize {
        self.word.width()
            + self.chars.width()
            + self.embedding_dim
            + self.lexicons.width()
            + VADER_WIDTH
    }

    /// `[word tf-idf | char tf-idf | weighted embedding | lexicon block | valence block]`
    pub fn raw(&self, text: &str, table: &EmbeddingTable) -> Result<Vec<f64>> {
        if table.dim() != self.embedding_dim {
            return Err(Error::dims(
                &[self.embedding_dim],
                &[table.dim()],
                "embedding width",
            ));
        }
        let cased = tokenize_cased(text);
        let tokens = tokenize(text);
        let mut out = Vec::with_capacity(self.width());
        out.extend(tfidf::densify(
            &self.word.transform_tokens(&tokens),
            self.word.width(),
        ));
        out.extend(self.chars.transform_dense(text));
        out.extend(weighted_embedding_average(&tokens, table, &self.word).into_data());
        out.extend(self.lexicons.features(&tokens));
        out.extend(self.scorer.score(&cased).to_vec());
        debug_assert_eq!(out.len(), self.width());
        Ok(out)
    }
}

/// dense(256, relu) → dense(128, relu).
#[derive(Debug, Clone)]
pub struct Projector {
    pub hidden: Dense,
    pub output: Dense,
}

impl Projector {
    pub fn new(params: &mut ParamSet, raw_width: usize, rng: &mut SeededRng) -> Self {
        Self {
            hidden: Dense::new(
                params,
                "proj.hidden",
                raw_width,
                PROJECTOR_HIDDEN,
                Activation::Relu,
                rng,
            ),
            output: Dense::new(
                params,
                "proj.output",
                PROJECTOR_HIDDEN,
                REPRESENTATION_WIDTH,
                Activation::Relu,
                rng,
            ),
        }
    }

    pub fn raw_width(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], raw: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, pv, raw)?;
        self.output.forward(tape, pv, h)
    }

    /// Eager projection of one raw vector.
    pub fn project(&self, params: &ParamSet, raw: &[f64]) -> Result<Tensor> {
        if raw.len() != self.raw_width() {
            return Err(Error::dims(
                &[self.raw_width()],
                &[raw.len()],
                "raw feature width",
            ));
        }
        let mut tape = Tape::new();
        let pv = params.leaves(&mut tape);
        let x = tape.leaf(Tensor::new(raw.to_vec(), vec![1, raw.len()])?);
        let y = self.forward(&mut tape, &pv, x)?;
        tape.value(y).clone().reshape(vec![REPRESENTATION_WIDTH])
    }
}

/// Public form of [`Projector::project`].
pub fn project_features(raw: &[f64], projector: &Projector, params: &ParamSet) -> Result<Tensor> {
    projector.project(params, raw)
}

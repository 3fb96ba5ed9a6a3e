//! Simplified rule-based valence scoring in the style of VADER.
//!
//! Rules applied to each token that has a lexicon valence:
//! a preceding booster word shifts it by ±0.293 away from zero (dampeners
//! toward zero), an ALL-CAPS token is scaled by 1.25, and a negation word within
//! the three preceding tokens scales it by −0.74. Up to three `!` tokens then
//! push the sum away from zero by 0.292 each. The compound score is
//! `s / sqrt(s² + 15)`.

use std::collections::{HashMap, HashSet};

use super::lexicon::LexiconSet;

pub const NEGATION_SCALAR: f64 = -0.74;
pub const CAPS_FACTOR: f64 = 1.25;
pub const BOOSTER_INCREMENT: f64 = 0.293;
pub const EXCLAMATION_INCREMENT: f64 = 0.292;
pub const MAX_EXCLAMATIONS: usize = 3;
pub const NORMALIZATION_ALPHA: f64 = 15.0;
pub const NEGATION_WINDOW: usize = 3;

const NEGATIONS: &[&str] = &[
    "not", "no", "never", "none", "nobody", "nothing", "neither", "nor", "nowhere", "cannot",
    "without", "aint", "dont", "doesnt", "didnt", "isnt", "wasnt", "wont", "cant", "couldnt",
    "shouldnt", "wouldnt", "hasnt", "havent", "hadnt", "arent", "werent", "nope",
];

const DEFAULT_BOOSTERS: &[(&str, f64)] = &[
    ("absolutely", 1.0),
    ("completely", 1.0),
    ("extremely", 1.0),
    ("incredibly", 1.0),
    ("really", 1.0),
    ("so", 1.0),
    ("totally", 1.0),
    ("very", 1.0),
    ("barely", -1.0),
    ("hardly", -1.0),
    ("kinda", -1.0),
    ("slightly", -1.0),
    ("somewhat", -1.0),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaderScores {
    pub compound: f64,
    pub positive: f64,
    pub negative: f64,
    pub neutral: f64,
}

impl VaderScores {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.compound, self.positive, self.negative, self.neutral]
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValenceScorer {
    valence: HashMap<String, f64>,
    boosters: HashMap<String, f64>,
    negations: HashSet<String>,
}

impl ValenceScorer {
    pub fn new(valence: HashMap<String, f64>) -> Self {
        Self {
            valence,
            boosters: DEFAULT_BOOSTERS
                .iter()
                .map(|&(w, s)| (w.to_string(), s))
                .collect(),
            negations: NEGATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Valence from every `valence` lexicon in the set; `booster` lexicons
    /// extend the built-in booster list.
    pub fn from_lexicons(lexicons: &LexiconSet) -> Self {
        let mut scorer = Self::new(lexicons.valence());
        scorer.boosters.extend(lexicons.boosters());
        scorer
    }

    pub fn with_boosters(mut self, boosters: impl IntoIterator<Item = (String, f64)>) -> Self {
        self.boosters.extend(boosters);
        self
    }

    /// Same rules with every lexicon valence negated.
    pub fn negated(&self) -> Self {
        Self {
            valence: self.valence.iter().map(|(k, v)| (k.clone(), -v)).collect(),
            ..self.clone()
        }
    }

    fn is_negation(&self, lower: &str) -> bool {
        self.negations.contains(lower) || lower.ends_with("n't")
    }

    /// Scores case-preserving tokens (see `tokenize_cased`).
    pub fn score(&self, tokens: &[String]) -> VaderScores {
        let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut sum = 0.0;
        let (mut pos, mut neg) = (0usize, 0usize);
        for (i, (raw, lower)) in tokens.iter().zip(&lowered).enumerate() {
            let Some(&base) = self.valence.get(lower) else {
                continue;
            };
            let mut v = base;
            if i > 0 {
                if let Some(&dir) = self.boosters.get(&lowered[i - 1]) {
                    v += dir * BOOSTER_INCREMENT * sign(v);
                }
            }
            if is_all_caps(raw) {
                v *= CAPS_FACTOR;
            }
            let window = i.saturating_sub(NEGATION_WINDOW)..i;
            if lowered[window].iter().any(|t| self.is_negation(t)) {
                v *= NEGATION_SCALAR;
            }
            if v > 0.0 {
                pos += 1;
            } else if v < 0.0 {
                neg += 1;
            }
            sum += v;
        }
        let bangs = lowered
            .iter()
            .filter(|t| *t == "!")
            .count()
            .min(MAX_EXCLAMATIONS);
        sum += sign(sum) * EXCLAMATION_INCREMENT * bangs as f64;

        let compound = sum / (sum * sum + NORMALIZATION_ALPHA).sqrt();
        if tokens.is_empty() {
            return VaderScores {
                compound,
                positive: 0.0,
                negative: 0.0,
                neutral: 1.0,
            };
        }
        let n = tokens.len() as f64;
        VaderScores {
            compound,
            positive: pos as f64 / n,
            negative: neg as f64 / n,
            neutral: (tokens.len() - pos - neg) as f64 / n,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn is_all_caps(token: &str) -> bool {
    token.chars().any(char::is_alphabetic) && !token.chars().any(char::is_lowercase)
}

/// Public form of [`ValenceScorer::score`].
pub fn vader_score(tokens: &[String], scorer: &ValenceScorer) -> VaderScores {
    scorer.score(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tokenize::tokenize_cased;

    fn scorer(entries: &[(&str, f64)]) -> ValenceScorer {
        ValenceScorer::new(entries.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    #[test]
    fn no_hits_is_neutral() {
        let s = scorer(&[("good", 1.9)]).score(&tokenize_cased("the cat sat"));
        assert_eq!(s.compound, 0.0);
        assert_eq!(s.neutral, 1.0);
        let empty = scorer(&[]).score(&[]);
        assert_eq!(empty.compound, 0.0);
        assert_eq!(empty.neutral, 1.0);
    }

    #[test]
    fn normalization() {
        let s = scorer(&[("x", 15.0)]).score(&tokenize_cased("x"));
        assert!((s.compound - 15.0 / 240f64.sqrt()).abs() < 1e-12);
        assert!((s.compound - 0.9682).abs() < 1e-4);
    }

    #[test]
    fn negation_flips() {
        let s = scorer(&[("good", 1.9)]).score(&tokenize_cased("not good"));
        let raw: f64 = 1.9 * -0.74;
        assert!((raw - -1.406).abs() < 1e-12);
        assert!((s.compound - raw / (raw * raw + 15.0).sqrt()).abs() < 1e-12);
        assert!((s.compound - -0.341).abs() < 1e-3);
        assert_eq!(s.negative, 0.5);
        assert_eq!(s.neutral, 0.5);
    }

    #[test]
    fn negation_window_is_three() {
        let sc = scorer(&[("good", 1.0)]);
        let near = sc.score(&tokenize_cased("not a very good"));
        assert!(near.compound < 0.0);
        let far = sc.score(&tokenize_cased("not a b c good"));
        assert!(far.compound > 0.0);
        let contraction = sc.score(&tokenize_cased("don't like good"));
        assert!(contraction.compound < 0.0);
    }

    #[test]
    fn caps_booster_and_exclamation() {
        let sc = scorer(&[("good", 2.0)]);
        let plain = sc.score(&tokenize_cased("good")).compound;
        let caps = sc.score(&tokenize_cased("GOOD")).compound;
        let boosted = sc.score(&tokenize_cased("very good")).compound;
        let damp = sc.score(&tokenize_cased("slightly good")).compound;
        let bang = sc.score(&tokenize_cased("good!!!!!")).compound;
        let expected = |s: f64| s / (s * s + 15.0).sqrt();
        assert!((caps - expected(2.5)).abs() < 1e-12);
        assert!((boosted - expected(2.293)).abs() < 1e-12);
        assert!((damp - expected(2.0 - 0.293)).abs() < 1e-12);
        assert!((bang - expected(2.0 + 3.0 * 0.292)).abs() < 1e-12);
        assert!(caps > plain && boosted > plain && bang > plain && damp < plain);
    }

    #[test]
    fn odd_under_valence_negation() {
        let sc = scorer(&[("good", 1.9), ("bad", -2.5), ("meh", 0.3)]);
        for text in [
            "very good!!",
            "NOT bad",
            "meh meh bad!",
            "slightly bad but GOOD",
        ] {
            let toks = tokenize_cased(text);
            let a = sc.score(&toks).compound;
            let b = sc.negated().score(&toks).compound;
            assert!((a + b).abs() < 1e-12, "{text}: {a} vs {b}");
        }
    }
}

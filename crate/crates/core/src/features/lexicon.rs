//! Sentiment and emotion lexicons declared through a manifest.
//!
//! Manifest lines are `name<TAB>kind<TAB>path`, with paths relative to the
//! manifest's directory; blank lines and `#` comments are ignored. Lexicon
//! files are TSV:
//!
//! | kind                  | line format                      | feature columns                 |
//! |-----------------------|----------------------------------|---------------------------------|
//! | `polarity`            | `token  positive\|negative`      | positive count, negative count  |
//! | `score`               | `token  real`                    | sum of positive, sum of negative|
//! | `emotion-association` | `token  emotion  [score]`        | per emotion: count, score sum   |
//! | `emoticon`            | `token  real`                    | sum of positive, sum of negative|
//! | `valence`             | `token  real`                    | none (feeds the valence scorer) |
//! | `booster`             | `token  +1\|-1`                  | none (feeds the valence scorer) |
//!
//! Emotions are ordered lexicographically within an association lexicon.
//! Tokens are lowercased at load time to match the tokenizer.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconKind {
    Polarity,
    Score,
    EmotionAssociation,
    Emoticon,
    Valence,
    Booster,
}

impl LexiconKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "polarity" => Self::Polarity,
            "score" => Self::Score,
            "emotion-association" => Self::EmotionAssociation,
            "emoticon" => Self::Emoticon,
            "valence" => Self::Valence,
            "booster" => Self::Booster,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lexicon {
    Polarity {
        positive: HashSet<String>,
        negative: HashSet<String>,
    },
    Score(HashMap<String, f64>),
    EmotionAssociation {
        emotions: Vec<String>,
        entries: HashMap<String, Vec<(usize, f64)>>,
    },
    Emoticon(HashMap<String, f64>),
    Valence(HashMap<String, f64>),
    Booster(HashMap<String, f64>),
}

impl Lexicon {
    pub fn kind(&self) -> LexiconKind {
        match self {
            Lexicon::Polarity { .. } => LexiconKind::Polarity,
            Lexicon::Score(_) => LexiconKind::Score,
            Lexicon::EmotionAssociation { .. } => LexiconKind::EmotionAssociation,
            Lexicon::Emoticon(_) => LexiconKind::Emoticon,
            Lexicon::Valence(_) => LexiconKind::Valence,
            Lexicon::Booster(_) => LexiconKind::Booster,
        }
    }

    pub fn polarity<'a>(
        positive: impl IntoIterator<Item = &'a str>,
        negative: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        Lexicon::Polarity {
            positive: positive.into_iter().map(str::to_lowercase).collect(),
            negative: negative.into_iter().map(str::to_lowercase).collect(),
        }
    }

    pub fn scores<'a>(
        kind: LexiconKind,
        entries: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Self {
        let map = entries
            .into_iter()
            .map(|(t, v)| (t.to_lowercase(), v))
            .collect();
        match kind {
            LexiconKind::Score => Lexicon::Score(map),
            LexiconKind::Emoticon => Lexicon::Emoticon(map),
            LexiconKind::Valence => Lexicon::Valence(map),
            LexiconKind::Booster => Lexicon::Booster(map),
            other => panic!("{other:?} is not a token→score lexicon"),
        }
    }

    pub fn emotions<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str, f64)>) -> Self {
        let entries: Vec<(String, String, f64)> = entries
            .into_iter()
            .filter(|(_, _, s)| *s != 0.0)
            .map(|(t, e, s)| (t.to_lowercase(), e.to_lowercase(), s))
            .collect();
        let emotions: Vec<String> = entries
            .iter()
            .map(|(_, e, _)| e.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut map: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
        for (t, e, s) in entries {
            let col = emotions.binary_search(&e).expect("collected above");
            map.entry(t).or_default().push((col, s));
        }
        Lexicon::EmotionAssociation {
            emotions,
            entries: map,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Lexicon::Polarity { .. } | Lexicon::Score(_) | Lexicon::Emoticon(_) => 2,
            Lexicon::EmotionAssociation { emotions, .. } => 2 * emotions.len(),
            Lexicon::Valence(_) | Lexicon::Booster(_) => 0,
        }
    }

    fn column_names(&self, name: &str) -> Vec<String> {
        match self {
            Lexicon::Polarity { .. } => {
                vec![format!("{name}.pos_count"), format!("{name}.neg_count")]
            }
            Lexicon::Score(_) | Lexicon::Emoticon(_) => {
                vec![format!("{name}.pos_sum"), format!("{name}.neg_sum")]
            }
            Lexicon::EmotionAssociation { emotions, .. } => emotions
                .iter()
                .map(|e| format!("{name}.{e}.count"))
                .chain(emotions.iter().map(|e| format!("{name}.{e}.sum")))
                .collect(),
            Lexicon::Valence(_) | Lexicon::Booster(_) => Vec::new(),
        }
    }

    fn features(&self, tokens: &[String], out: &mut Vec<f64>) {
        match self {
            Lexicon::Polarity { positive, negative } => {
                let pos = tokens
                    .iter()
                    .filter(|t| positive.contains(t.as_str()))
                    .count();
                let neg = tokens
                    .iter()
                    .filter(|t| negative.contains(t.as_str()))
                    .count();
                out.push(pos as f64);
                out.push(neg as f64);
            }
            Lexicon::Score(map) | Lexicon::Emoticon(map) => {
                let (mut pos, mut neg) = (0.0, 0.0);
                for v in tokens.iter().filter_map(|t| map.get(t.as_str())) {
                    if *v > 0.0 {
                        pos += v;
                    } else {
                        neg += v;
                    }
                }
                out.push(pos);
                out.push(neg);
            }
            Lexicon::EmotionAssociation { emotions, entries } => {
                let mut counts = vec![0.0; emotions.len()];
                let mut sums = vec![0.0; emotions.len()];
                for assoc in tokens.iter().filter_map(|t| entries.get(t.as_str())) {
                    for &(col, score) in assoc {
                        counts[col] += 1.0;
                        sums[col] += score;
                    }
                }
                out.extend(counts);
                out.extend(sums);
            }
            Lexicon::Valence(_) | Lexicon::Booster(_) => {}
        }
    }

    fn load(kind: LexiconKind, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows: Vec<(usize, Vec<&str>)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|(i, l)| (i + 1, l.split('\t').map(str::trim).collect()))
            .collect();
        let bad = |line: usize, why: &str| Error::format(path, format!("line {line}: {why}"));
        let number = |line: usize, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| bad(line, &format!("`{s}` is not a number")))
        };
        Ok(match kind {
            LexiconKind::Polarity => {
                let mut pos = Vec::new();
                let mut neg = Vec::new();
                for (line, cols) in &rows {
                    match cols.get(1).copied() {
                        Some("positive" | "pos" | "+1" | "1") => pos.push(cols[0]),
                        Some("negative" | "neg" | "-1") => neg.push(cols[0]),
                        _ => return Err(bad(*line, "expected `token<TAB>positive|negative`")),
                    }
                }
                Lexicon::polarity(pos, neg)
            }
            LexiconKind::EmotionAssociation => {
                let mut entries = Vec::new();
                for (line, cols) in &rows {
                    if cols.len() < 2 {
                        return Err(bad(*line, "expected `token<TAB>emotion[<TAB>score]`"));
                    }
                    let score = match cols.get(2) {
                        Some(s) => number(*line, s)?,
                        None => 1.0,
                    };
                    entries.push((cols[0], cols[1], score));
                }
                Lexicon::emotions(entries)
            }
            _ => {
                let mut entries = Vec::new();
                for (line, cols) in &rows {
                    let Some(v) = cols.get(1) else {
                        return Err(bad(*line, "expected `token<TAB>value`"));
                    };
                    entries.push((cols[0], number(*line, v)?));
                }
                Lexicon::scores(kind, entries)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLexicon {
    pub name: String,
    pub lexicon: Lexicon,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexiconSet {
    lexicons: Vec<NamedLexicon>,
}

impl LexiconSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, lexicon: Lexicon) {
        self.lexicons.push(NamedLexicon {
            name: name.into(),
            lexicon,
        });
    }

    pub fn with(mut self, name: impl Into<String>, lexicon: Lexicon) -> Self {
        self.push(name, lexicon);
        self
    }

    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut set = LexiconSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = if line.contains('\t') {
                line.split('\t').map(str::trim).collect()
            } else {
                line.split_whitespace().collect()
            };
            let [name, kind, file] = cols[..] else {
                return Err(Error::format(
                    path,
                    format!("line {}: expected `name<TAB>kind<TAB>path`", i + 1),
                ));
            };
            let kind = LexiconKind::parse(kind).ok_or_else(|| {
                Error::format(
                    path,
                    format!("line {}: unknown lexicon kind `{kind}`", i + 1),
                )
            })?;
            let file = PathBuf::from(file);
            let resolved = if file.is_absolute() {
                file
            } else {
                base.join(file)
            };
            set.push(name, Lexicon::load(kind, &resolved)?);
        }
        Ok(set)
    }

    pub fn lexicons(&self) -> &[NamedLexicon] {
        &self.lexicons
    }

    pub fn width(&self) -> usize {
        self.lexicons.iter().map(|l| l.lexicon.width()).sum()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.lexicons
            .iter()
            .flat_map(|l| l.lexicon.column_names(&l.name))
            .collect()
    }

    /// The lexicon block for already-lowercased tokens.
    pub fn features(&self, tokens: &[String]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        for l in &self.lexicons {
            l.lexicon.features(tokens, &mut out);
        }
        out
    }

    /// Union of all valence lexicons; later entries win.
    pub fn valence(&self) -> HashMap<String, f64> {
        let mut out = HashMap::new();
        for l in &self.lexicons {
            if let Lexicon::Valence(map) = &l.lexicon {
                out.extend(map.iter().map(|(k, v)| (k.clone(), *v)));
            }
        }
        out
    }

    pub fn boosters(&self) -> HashMap<String, f64> {
        let mut out = HashMap::new();
        for l in &self.lexicons {
            if let Lexicon::Booster(map) = &l.lexicon {
                out.extend(map.iter().map(|(k, v)| (k.clone(), *v)));
            }
        }
        out
    }
}

/// Public form of [`LexiconSet::features`].
pub fn lexicon_features(tokens: &[String], lexicons: &LexiconSet) -> Vec<f64> {
    lexicons.features(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tokenize::tokenize;

    #[test]
    fn polarity_counts() {
        let set = LexiconSet::new().with("mpqa", Lexicon::polarity(["good"], ["bad"]));
        assert_eq!(set.features(&tokenize("good good bad")), vec![2.0, 1.0]);
        assert_eq!(set.features(&[]), vec![0.0, 0.0]);
    }

    #[test]
    fn score_sums() {
        let set = LexiconSet::new().with(
            "afinn",
            Lexicon::scores(LexiconKind::Score, [("great", 2.5), ("awful", -3.0)]),
        );
        assert_eq!(
            set.features(&tokenize("great awful awful")),
            vec![2.5, -6.0]
        );
    }

    #[test]
    fn case_folded_lookup() {
        let set = LexiconSet::new().with("p", Lexicon::polarity(["Good"], []));
        assert_eq!(set.features(&tokenize("GOOD")), vec![1.0, 0.0]);
    }

    #[test]
    fn emotion_block_layout() {
        let set = LexiconSet::new().with(
            "nrc",
            Lexicon::emotions([
                ("happy", "joy", 1.0),
                ("scared", "fear", 0.5),
                ("happy", "trust", 0.0),
            ]),
        );
        assert_eq!(set.width(), 4);
        assert_eq!(
            set.column_names(),
            [
                "nrc.fear.count",
                "nrc.joy.count",
                "nrc.fear.sum",
                "nrc.joy.sum"
            ]
        );
        assert_eq!(
            set.features(&tokenize("happy happy scared")),
            vec![1.0, 2.0, 0.5, 2.0]
        );
    }

    #[test]
    fn empty_tokens_all_zero() {
        let set = LexiconSet::new()
            .with("p", Lexicon::polarity(["a"], ["b"]))
            .with("e", Lexicon::emotions([("x", "anger", 1.0)]));
        assert!(set.features(&[]).iter().all(|&v| v == 0.0));
        assert_eq!(set.features(&[]).len(), set.width());
    }

    #[test]
    fn missing_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.tsv");
        fs::write(&manifest, "mpqa\tpolarity\tnope.tsv\n").unwrap();
        let err = LexiconSet::load_manifest(&manifest)
            .unwrap_err()
            .to_string();
        assert!(err.contains("nope.tsv"), "{err}");
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("pol.tsv"),
            "good\tpositive\nbad\tnegative\n",
        )
        .unwrap();
        fs::write(dir.path().join("val.tsv"), "good\t1.9\n").unwrap();
        fs::write(dir.path().join("emo.tsv"), "good\tjoy\t1\n").unwrap();
        let manifest = dir.path().join("m.tsv");
        fs::write(
            &manifest,
            "# comment\npol\tpolarity\tpol.tsv\nval\tvalence\tval.tsv\nemo\temotion-association\temo.tsv\n",
        )
        .unwrap();
        let set = LexiconSet::load_manifest(&manifest).unwrap();
        assert_eq!(set.width(), 4);
        assert_eq!(set.valence().get("good"), Some(&1.9));
    }

    #[test]
    fn unknown_kind_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.tsv");
        fs::write(&manifest, "x\tweird\tx.tsv\n").unwrap();
        assert!(LexiconSet::load_manifest(&manifest).is_err());
    }
}

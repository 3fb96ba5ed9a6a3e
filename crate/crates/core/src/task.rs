//! Task descriptions, per-instance targets and decoded predictions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, LossKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMOTIONS: [&str; 4] = ["anger", "fear", "joy", "sadness"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskKind {
    Classification { classes: Vec<String> },
    Regression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
}

impl TaskSpec {
    /// Needs at least two distinct class names.
    pub fn classification<S: Into<String>>(
        name: impl Into<String>,
        classes: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        let name = name.into();
        if classes.len() < 2 {
            return Err(Error::Config(format!(
                "task `{name}` needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::Config(format!("task `{name}` repeats class `{c}`")));
            }
        }
        Ok(Self {
            name,
            kind: TaskKind::Classification { classes },
        })
    }

    pub fn regression(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: TaskKind::Regression,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.kind, TaskKind::Classification { .. })
    }

    pub fn classes(&self) -> &[String] {
        match &self.kind {
            TaskKind::Classification { classes } => classes,
            TaskKind::Regression => &[],
        }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes().iter().position(|c| c == label)
    }

    pub fn output_width(&self) -> usize {
        match &self.kind {
            TaskKind::Classification { classes } => classes.len(),
            TaskKind::Regression => 1,
        }
    }

    pub fn head_activation(&self) -> Activation {
        if self.is_classification() {
            Activation::Softmax
        } else {
            Activation::Sigmoid
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        if self.is_classification() {
            LossKind::CategoricalCrossEntropy
        } else {
            LossKind::MeanSquaredError
        }
    }

    /// Stacks gold values into the head's output shape: one-hot rows for
    /// classification, a single column for regression.
    pub fn gold<'a>(&self, targets: impl IntoIterator<Item = &'a Target>) -> Result<Tensor> {
        let width = self.output_width();
        let mut data = Vec::new();
        for t in targets {
            match (t, &self.kind) {
                (Target::Class(c), TaskKind::Classification { classes }) if *c < classes.len() => {
                    let mut row = vec![0.0; width];
                    row[*c] = 1.0;
                    data.extend(row);
                }
                (Target::Score(s), TaskKind::Regression) => data.push(*s),
                _ => {
                    return Err(Error::Data(format!(
                        "target {t:?} does not fit task `{}`",
                        self.name
                    )))
                }
            }
        }
        if data.is_empty() {
            return Err(Error::Data(format!("no targets for task `{}`", self.name)));
        }
        let rows = data.len() / width;
        Tensor::new(data, vec![rows, width])
    }

    /// Turns one output row into a prediction.
    pub fn decode(&self, row: &[f64]) -> Prediction {
        match &self.kind {
            TaskKind::Classification { classes } => {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                Prediction::Class {
                    index: best,
                    label: classes[best].clone(),
                    distribution: row.to_vec(),
                }
            }
            TaskKind::Regression => Prediction::Score(row[0]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Score(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class {
        index: usize,
        label: String,
        distribution: Vec<f64>,
    },
    Score(f64),
}

impl Prediction {
    pub fn class_index(&self) -> Option<usize> {
        match self {
            Prediction::Class { index, .. } => Some(*index),
            Prediction::Score(_) => None,
        }
    }

    pub fn score(&self) -> Option<f64> {
        match self {
            Prediction::Score(s) => Some(*s),
            Prediction::Class { .. } => None,
        }
    }

    /// Class name or scalar, as written to prediction files.
    pub fn render(&self) -> String {
        match self {
            Prediction::Class { label, .. } => label.clone(),
            Prediction::Score(s) => s.to_string(),
        }
    }
}

/// The three problem configurations and the tasks each one trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    /// Emotion class plus intensity.
    CoarseEmotion,
    /// Valence, arousal and dominance.
    FineEmotion,
    /// Valence and arousal.
    FineSentiment,
}

impl Problem {
    pub fn tasks(self) -> Vec<TaskSpec> {
        match self {
            Problem::CoarseEmotion => vec![
                TaskSpec::classification("emotion", EMOTIONS).expect("four classes"),
                TaskSpec::regression("intensity"),
            ],
            Problem::FineEmotion => ["valence", "arousal", "dominance"]
                .into_iter()
                .map(TaskSpec::regression)
                .collect(),
            Problem::FineSentiment => ["valence", "arousal"]
                .into_iter()
                .map(TaskSpec::regression)
                .collect(),
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::CoarseEmotion => "coarse-emotion",
            Problem::FineEmotion => "fine-emotion",
            Problem::FineSentiment => "fine-sentiment",
        })
    }
}

impl FromStr for Problem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse-emotion" => Ok(Problem::CoarseEmotion),
            "fine-emotion" => Ok(Problem::FineEmotion),
            "fine-sentiment" => Ok(Problem::FineSentiment),
            other => Err(Error::Usage(format!(
                "unknown problem `{other}` (expected coarse-emotion, fine-emotion or fine-sentiment)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_tasks() {
        let t = Problem::CoarseEmotion.tasks();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].output_width(), 4);
        assert_eq!(t[0].head_activation(), Activation::Softmax);
        assert_eq!(t[1].head_activation(), Activation::Sigmoid);
        assert_eq!(Problem::FineEmotion.tasks().len(), 3);
        assert_eq!(Problem::FineSentiment.tasks().len(), 2);
        for p in [
            Problem::CoarseEmotion,
            Problem::FineEmotion,
            Problem::FineSentiment,
        ] {
            assert_eq!(p.to_string().parse::<Problem>().unwrap(), p);
        }
        assert!("coarse".parse::<Problem>().is_err());
    }

    #[test]
    fn classification_needs_two_distinct_classes() {
        assert!(TaskSpec::classification("e", ["a"]).is_err());
        assert!(TaskSpec::classification("e", ["a", "a"]).is_err());
        assert!(TaskSpec::classification("e", ["a", "b"]).is_ok());
    }

    #[test]
    fn gold_layout() {
        let c = TaskSpec::classification("e", ["a", "b", "c"]).unwrap();
        let g = c.gold(&[Target::Class(2), Target::Class(0)]).unwrap();
        assert_eq!(g.shape(), &[2, 3]);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(c.gold(&[Target::Score(0.5)]).is_err());
        assert!(c.gold(&[Target::Class(3)]).is_err());
        let r = TaskSpec::regression("i");
        assert_eq!(r.gold(&[Target::Score(0.25)]).unwrap().shape(), &[1, 1]);
    }

    #[test]
    fn decode_argmax() {
        let c = TaskSpec::classification("e", ["a", "b"]).unwrap();
        match c.decode(&[0.3, 0.7]) {
            Prediction::Class { index, label, .. } => {
                assert_eq!(index, 1);
                assert_eq!(label, "b");
            }
            p => panic!("{p:?}"),
        }
        assert_eq!(TaskSpec::regression("i").decode(&[0.4]).score(), Some(0.4));
    }
}

//! Accuracy, Pearson correlation, dependent evaluation, confusion matrices and
//! the paired t-test.

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::task::{Prediction, Target, TaskKind, TaskSpec};

fn same_len(a: usize, b: usize, context: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::dims(&[a], &[b], context));
    }
    Ok(())
}

pub fn accuracy<T: PartialEq>(gold: &[T], pred: &[T]) -> Result<f64> {
    same_len(gold.len(), pred.len(), "accuracy operands")?;
    if gold.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of zero instances".into()));
    }
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Sample Pearson correlation. Either side being constant is an error.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len(), "pearson operands")?;
    let n = x.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!(
            "pearson needs 2 points, got {n}"
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric(
            "pearson of a constant series".into(),
        ));
    }
    if n == 2 {
        // two distinct points lie on a line: r is exactly ±1
        return Ok(sxy.signum());
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson over the instances whose class was predicted correctly, with the
/// number of instances kept.
pub fn dependent_pearson<C: PartialEq>(
    gold_classes: &[C],
    pred_classes: &[C],
    gold_scores: &[f64],
    pred_scores: &[f64],
) -> Result<(f64, usize)> {
    same_len(gold_classes.len(), pred_classes.len(), "class sequences")?;
    same_len(
        gold_classes.len(),
        gold_scores.len(),
        "classes vs gold scores",
    )?;
    same_len(gold_scores.len(), pred_scores.len(), "score sequences")?;
    let (g, p): (Vec<f64>, Vec<f64>) = (0..gold_classes.len())
        .filter(|&i| gold_classes[i] == pred_classes[i])
        .map(|i| (gold_scores[i], pred_scores[i]))
        .unzip();
    if g.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "dependent pearson over {} correctly classified instances",
            g.len()
        )));
    }
    Ok((pearson(&g, &p)?, g.len()))
}

/// Rows are gold classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::dims(&[k, k], &[counts.len()], "confusion counts"));
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::UndefinedMetric(
                "accuracy of an empty confusion matrix".into(),
            )),
            t => Ok(self.trace() as f64 / t as f64),
        }
    }

    /// Header row of predicted classes, then one row per gold class.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for c in &self.classes {
            write!(out, "\t{c}").unwrap();
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c);
            for n in row {
                write!(out, "\t{n}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion<S: AsRef<str>>(
    gold: &[S],
    pred: &[S],
    classes: &[String],
) -> Result<ConfusionMatrix> {
    same_len(gold.len(), pred.len(), "confusion operands")?;
    let k = classes.len();
    let index = |label: &str| {
        classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Data(format!("label `{label}` is not one of {classes:?}")))
    };
    let mut counts = vec![vec![0u64; k]; k];
    for (g, p) in gold.iter().zip(pred) {
        counts[index(g.as_ref())?][index(p.as_ref())?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
}

/// Paired t-test on `a − b`. Zero-variance differences give `p = 1` when the
/// mean difference is zero and `p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    same_len(a.len(), b.len(), "paired samples")?;
    let n = a.len();
    if n < 2 {
        return Err(Error::UndefinedMetric(format!(
            "t-test needs 2 pairs, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                p: 0.0,
                df,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(TTest {
        t,
        p: student_t_two_sided(t, df as f64),
        df,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub const SIGNIFICANCE_SAMPLES: usize = 20;
pub const SIGNIFICANCE_SIGMA: f64 = 0.05;

/// `n` draws from N(mean, sigma).
pub fn normal_samples(mean: f64, sigma: f64, n: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let dist = Normal::new(mean, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok((0..n).map(|_| dist.sample(rng.as_rng())).collect())
}

/// Compares two systems known only by a single score each: draws 20 samples
/// with σ = 0.05 around each score and runs the paired t-test on them.
pub fn sampled_significance(score_a: f64, score_b: f64, seed: u64) -> Result<TTest> {
    let mut rng = SeededRng::new(seed);
    let a = normal_samples(score_a, SIGNIFICANCE_SIGMA, SIGNIFICANCE_SAMPLES, &mut rng)?;
    let b = normal_samples(score_b, SIGNIFICANCE_SIGMA, SIGNIFICANCE_SAMPLES, &mut rng)?;
    paired_t_test(&a, &b)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricValue {
    Defined(f64),
    Undefined(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricEntry {
    /// Row label, usually the task name, optionally qualified by a system.
    pub scope: String,
    pub metric: String,
    pub value: MetricValue,
    /// Instances the metric was computed over.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub dependent: bool,
    pub entries: Vec<MetricEntry>,
    pub confusions: Vec<(String, ConfusionMatrix)>,
}

impl EvalReport {
    pub fn push(&mut self, scope: &str, metric: &str, value: Result<f64>, count: usize) {
        let value = match value {
            Ok(v) => MetricValue::Defined(v),
            Err(e) => MetricValue::Undefined(e.to_string()),
        };
        self.entries.push(MetricEntry {
            scope: scope.to_string(),
            metric: metric.to_string(),
            value,
            count,
        });
    }

    pub fn get(&self, scope: &str, metric: &str) -> Option<&MetricValue> {
        self.entries
            .iter()
            .find(|e| e.scope == scope && e.metric == metric)
            .map(|e| &e.value)
    }

    pub fn defined(&self, scope: &str, metric: &str) -> Option<f64> {
        match self.get(scope, metric) {
            Some(MetricValue::Defined(v)) => Some(*v),
            _ => None,
        }
    }

    /// Appends entries of another report under a scope prefix.
    pub fn merge_scoped(&mut self, prefix: &str, other: &EvalReport) {
        for e in &other.entries {
            self.entries.push(MetricEntry {
                scope: format!("{prefix}.{}", e.scope),
                ..e.clone()
            });
        }
    }

    /// `scope.metric=value` and `scope.metric.n=count` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = format!("dependent={}\n", self.dependent);
        for e in &self.entries {
            match &e.value {
                MetricValue::Defined(v) => writeln!(out, "{}.{}={v}", e.scope, e.metric).unwrap(),
                MetricValue::Undefined(why) => {
                    writeln!(out, "{}.{}=undefined ({why})", e.scope, e.metric).unwrap()
                }
            }
            writeln!(out, "{}.{}.n={}", e.scope, e.metric, e.count).unwrap();
        }
        for (task, cm) in &self.confusions {
            for (g, row) in cm.classes.iter().zip(&cm.counts) {
                for (p, n) in cm.classes.iter().zip(row) {
                    writeln!(out, "{task}.confusion.{g}.{p}={n}").unwrap();
                }
            }
        }
        out
    }

    /// `scope<TAB>metric<TAB>value<TAB>n` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scope\tmetric\tvalue\tn\n");
        for e in &self.entries {
            let v = match &e.value {
                MetricValue::Defined(v) => v.to_string(),
                MetricValue::Undefined(_) => "NA".to_string(),
            };
            writeln!(out, "{}\t{}\t{v}\t{}", e.scope, e.metric, e.count).unwrap();
        }
        out
    }
}

/// Accuracy and confusion for classification tasks, Pearson for regression
/// tasks. With `dependent`, regression tasks are also scored only over
/// instances whose first classification task was predicted correctly.
pub fn evaluate(
    tasks: &[TaskSpec],
    gold: &[Vec<Target>],
    pred: &[Vec<Prediction>],
    dependent: bool,
) -> Result<EvalReport> {
    same_len(gold.len(), pred.len(), "gold vs predictions")?;
    let mut report = EvalReport {
        dependent,
        ..EvalReport::default()
    };
    let n = gold.len();
    let class_of = |k: usize| -> Result<(Vec<usize>, Vec<usize>)> {
        let g = gold.iter().map(|t| match t[k] {
            Target::Class(c) => Ok(c),
            Target::Score(_) => Err(Error::Data(format!(
                "task `{}` expects classes",
                tasks[k].name
            ))),
        });
        let p = pred.iter().map(|p| {
            p[k].class_index().ok_or_else(|| {
                Error::Data(format!(
                    "task `{}` prediction is not a class",
                    tasks[k].name
                ))
            })
        });
        Ok((g.collect::<Result<_>>()?, p.collect::<Result<_>>()?))
    };
    let score_of = |k: usize| -> Result<(Vec<f64>, Vec<f64>)> {
        let g = gold.iter().map(|t| match t[k] {
            Target::Score(s) => Ok(s),
            Target::Class(_) => Err(Error::Data(format!(
                "task `{}` expects scores",
                tasks[k].name
            ))),
        });
        let p = pred.iter().map(|p| {
            p[k].score().ok_or_else(|| {
                Error::Data(format!(
                    "task `{}` prediction is not a score",
                    tasks[k].name
                ))
            })
        });
        Ok((g.collect::<Result<_>>()?, p.collect::<Result<_>>()?))
    };
    let mut first_class: Option<(Vec<usize>, Vec<usize>)> = None;
    for (k, task) in tasks.iter().enumerate() {
        match &task.kind {
            TaskKind::Classification { classes } => {
                let (g, p) = class_of(k)?;
                report.push(&task.name, "accuracy", accuracy(&g, &p), n);
                let names = |v: &[usize]| v.iter().map(|&c| classes[c].clone()).collect::<Vec<_>>();
                report.confusions.push((
                    task.name.clone(),
                    confusion(&names(&g), &names(&p), classes)?,
                ));
                first_class.get_or_insert((g, p));
            }
            TaskKind::Regression => {
                let (g, p) = score_of(k)?;
                report.push(&task.name, "pearson", pearson(&g, &p), n);
            }
        }
    }
    if dependent {
        if let Some((gc, pc)) = &first_class {
            for (k, task) in tasks.iter().enumerate() {
                if task.is_classification() {
                    continue;
                }
                let (g, p) = score_of(k)?;
                match dependent_pearson(gc, pc, &g, &p) {
                    Ok((r, used)) => report.push(&task.name, "dependent_pearson", Ok(r), used),
                    Err(e) => {
                        let used = gc.iter().zip(pc).filter(|(a, b)| a == b).count();
                        report.push(&task.name, "dependent_pearson", Err(e), used)
                    }
                }
            }
        }
    }
    Ok(report)
}

//! Dataset parsing, target scaling, splits, embedding files, TSV dumps and the
//! binary checkpoint container.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingTable, OovPolicy};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::SeededRng;
use crate::task::{Prediction, Problem, Target, TaskKind, TaskSpec, EMOTIONS};
use crate::tensor::Tensor;

/// One text with its gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub label: Option<String>,
    pub scores: BTreeMap<String, f64>,
}

impl Instance {
    pub fn score(&self, name: &str) -> Option<f64> {
        self.scores.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    /// `id, text, emotion, intensity` with intensity in [0, 1].
    Emoint,
    /// `id, text, V, A, D` on a 1–5 scale.
    Vad,
    /// `id, text, V, A` on a 1–9 scale.
    Va,
}

impl Schema {
    pub fn for_problem(problem: Problem) -> Self {
        match problem {
            Problem::CoarseEmotion => Schema::Emoint,
            Problem::FineEmotion => Schema::Vad,
            Problem::FineSentiment => Schema::Va,
        }
    }

    pub fn score_names(self) -> &'static [&'static str] {
        match self {
            Schema::Emoint => &["intensity"],
            Schema::Vad => &["valence", "arousal", "dominance"],
            Schema::Va => &["valence", "arousal"],
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            Schema::Emoint => (0.0, 1.0),
            Schema::Vad => (1.0, 5.0),
            Schema::Va => (1.0, 9.0),
        }
    }

    fn columns(self) -> usize {
        match self {
            Schema::Emoint => 4,
            Schema::Vad => 5,
            Schema::Va => 4,
        }
    }

    pub fn normalize(self, x: f64) -> f64 {
        let (lo, hi) = self.range();
        (x - lo) / (hi - lo)
    }

    pub fn denormalize(self, x: f64) -> f64 {
        let (lo, hi) = self.range();
        x * (hi - lo) + lo
    }

    fn parse_row(self, fields: &[&str]) -> std::result::Result<Instance, String> {
        if fields.len() != self.columns() {
            return Err(format!(
                "{} fields, expected {}",
                fields.len(),
                self.columns()
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err("empty id".into());
        }
        let (lo, hi) = self.range();
        let number = |s: &str| -> std::result::Result<f64, String> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| format!("not a number: `{s}`"))?;
            if !(lo..=hi).contains(&v) {
                return Err(format!("{v} outside [{lo}, {hi}]"));
            }
            Ok(v)
        };
        let (label, first_score) = match self {
            Schema::Emoint => {
                let e = fields[2].trim().to_lowercase();
                if !EMOTIONS.contains(&e.as_str()) {
                    return Err(format!("unknown emotion `{}`", fields[2]));
                }
                (Some(e), 3)
            }
            Schema::Vad | Schema::Va => (None, 2),
        };
        let mut scores = BTreeMap::new();
        for (name, raw) in self.score_names().iter().zip(&fields[first_score..]) {
            scores.insert(name.to_string(), number(raw)?);
        }
        Ok(Instance {
            id: id.to_string(),
            text: fields[1].to_string(),
            label,
            scores,
        })
    }
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emoint" => Ok(Schema::Emoint),
            "vad" => Ok(Schema::Vad),
            "va" => Ok(Schema::Va),
            other => Err(Error::Usage(format!("unknown schema `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub instances: Vec<Instance>,
    /// Data rows skipped as malformed.
    pub malformed: usize,
    /// Data rows seen, header excluded.
    pub rows: usize,
}

/// Parses TSV text. A first line whose first field is `id` is a header.
/// Rows that do not parse are skipped and counted; more than 10% of them
/// fails the whole load.
pub fn parse_dataset(text: &str, schema: Schema, source: &str) -> Result<LoadedDataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    if lines.peek().is_some_and(|l| {
        l.split('\t')
            .next()
            .is_some_and(|f| f.trim().eq_ignore_ascii_case("id"))
    }) {
        lines.next();
    }
    let mut instances = Vec::new();
    let mut malformed = 0;
    let mut rows = 0;
    let mut seen = HashSet::new();
    for (n, line) in lines.enumerate() {
        rows += 1;
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        match schema.parse_row(&fields) {
            Ok(inst) if seen.insert(inst.id.clone()) => instances.push(inst),
            Ok(inst) => {
                malformed += 1;
                warn!("{source}: data row {}: duplicate id `{}`", n + 1, inst.id);
            }
            Err(why) => {
                malformed += 1;
                warn!("{source}: data row {}: {why}", n + 1);
            }
        }
    }
    if rows == 0 {
        return Err(Error::format(source, "no data rows"));
    }
    if malformed * 10 > rows {
        return Err(Error::format(
            source,
            format!("{malformed} of {rows} rows malformed; wrong schema {schema:?}?"),
        ));
    }
    Ok(LoadedDataset {
        instances,
        malformed,
        rows,
    })
}

pub fn load_dataset(path: impl AsRef<Path>, schema: Schema) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, schema, &path.display().to_string())
}

/// Rescales every score to [0, 1]; the emoint intensity already is.
pub fn normalize_targets(instances: &[Instance], schema: Schema) -> Vec<Instance> {
    map_scores(instances, |x| schema.normalize(x))
}

pub fn denormalize_targets(instances: &[Instance], schema: Schema) -> Vec<Instance> {
    map_scores(instances, |x| schema.denormalize(x))
}

fn map_scores(instances: &[Instance], f: impl Fn(f64) -> f64) -> Vec<Instance> {
    instances
        .iter()
        .map(|i| Instance {
            scores: i.scores.iter().map(|(k, &v)| (k.clone(), f(v))).collect(),
            ..i.clone()
        })
        .collect()
}

/// Per-instance targets in task order.
pub fn targets(instances: &[Instance], tasks: &[TaskSpec]) -> Result<Vec<Vec<Target>>> {
    instances
        .iter()
        .map(|inst| {
            tasks
                .iter()
                .map(|task| match &task.kind {
                    TaskKind::Classification { .. } => {
                        let label = inst.label.as_deref().ok_or_else(|| {
                            Error::Data(format!("instance `{}` has no class label", inst.id))
                        })?;
                        task.class_index(label).map(Target::Class).ok_or_else(|| {
                            Error::Data(format!(
                                "instance `{}`: label `{label}` is not a class of `{}`",
                                inst.id, task.name
                            ))
                        })
                    }
                    TaskKind::Regression => {
                        inst.score(&task.name).map(Target::Score).ok_or_else(|| {
                            Error::Data(format!(
                                "instance `{}` has no `{}` score",
                                inst.id, task.name
                            ))
                        })
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
}

fn shuffled_by_id(instances: &[Instance], seed: u64) -> Vec<Instance> {
    let mut v = instances.to_vec();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    SeededRng::new(seed).shuffle(&mut v);
    v
}

/// Seeded shuffle then contiguous cut; validation and test get
/// `floor(n·r/100)`, train gets the rest. Input order does not matter.
pub fn split(instances: &[Instance], ratios: [u32; 3], seed: u64) -> Result<Partition> {
    if ratios.iter().sum::<u32>() != 100 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} do not sum to 100"
        )));
    }
    let n = instances.len();
    if n < 3 {
        return Err(Error::Data(format!(
            "cannot split {n} instances three ways"
        )));
    }
    let v = shuffled_by_id(instances, seed);
    let n_val = n * ratios[1] as usize / 100;
    let n_test = n * ratios[2] as usize / 100;
    let n_train = n - n_val - n_test;
    Ok(Partition {
        train: v[..n_train].to_vec(),
        val: v[n_train..n_train + n_val].to_vec(),
        test: v[n_train + n_val..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// `k` folds whose sizes differ by at most one; the first `n mod k` folds
/// take the extra instance.
pub fn kfold(instances: &[Instance], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = instances.len();
    if k < 2 || n < k {
        return Err(Error::Data(format!(
            "cannot make {k} folds from {n} instances"
        )));
    }
    let v = shuffled_by_id(instances, seed);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let test = v[start..start + size].to_vec();
        let train = v[..start]
            .iter()
            .chain(&v[start + size..])
            .cloned()
            .collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Fold `fold` of [`kfold`] as a three-way partition: the fold is the test
/// set and the last tenth (floor) of the remaining instances is held out for
/// validation.
pub fn fold_partition(
    instances: &[Instance],
    k: usize,
    fold: usize,
    seed: u64,
) -> Result<Partition> {
    if fold >= k {
        return Err(Error::Config(format!(
            "fold {fold} out of range for {k} folds"
        )));
    }
    let Fold { mut train, test } = kfold(instances, k, seed)?.swap_remove(fold);
    let val = train.split_off(train.len() - train.len() / 10);
    Ok(Partition { train, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingLoadReport {
    pub kept: usize,
    pub malformed: usize,
}

/// GloVe text layout: `token v1 … v_dim` per line. `filter` limits which tokens
/// are kept (`None` keeps all). Lines whose values do not parse are skipped
/// and counted; a line with a different number of values is a format error.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    filter: Option<&HashSet<String>>,
    dim: usize,
    oov: OovPolicy,
) -> Result<(EmbeddingTable, EmbeddingLoadReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, filter, dim, oov, &path.display().to_string())
}

pub fn parse_embeddings(
    text: &str,
    filter: Option<&HashSet<String>>,
    dim: usize,
    oov: OovPolicy,
    source: &str,
) -> Result<(EmbeddingTable, EmbeddingLoadReport)> {
    let mut table = EmbeddingTable::new(dim, oov);
    let mut malformed = 0;
    let mut values = Vec::with_capacity(dim);
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or_default();
        let fields: Vec<&str> = parts.filter(|p| !p.is_empty()).collect();
        if fields.is_empty() {
            malformed += 1;
            warn!("{source}:{}: no values", n + 1);
            continue;
        }
        if fields.len() != dim {
            return Err(Error::format(
                source,
                format!("line {}: {} values, expected {dim}", n + 1, fields.len()),
            ));
        }
        if filter.is_some_and(|f| !f.contains(token)) {
            continue;
        }
        values.clear();
        if fields.iter().any(|f| match f.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                values.push(v);
                false
            }
            _ => true,
        }) {
            malformed += 1;
            warn!("{source}:{}: unparsable value", n + 1);
            continue;
        }
        if !table.contains(token) {
            table.insert(token, &values)?;
        }
    }
    let kept = table.len();
    Ok((table, EmbeddingLoadReport { kept, malformed }))
}

/// Writes `id<TAB>v1…vN` rows.
pub fn format_vectors<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = String::new();
    for (id, values) in rows {
        out.push_str(id);
        for v in values {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Reads `id<TAB>v1…vN` rows; every row must have `width` values when given,
/// and the same number as the first row otherwise.
pub fn parse_vectors(
    text: &str,
    width: Option<usize>,
    source: &str,
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(source, format!("line {}: {e}", n + 1)))?;
        let expected = width.or_else(|| out.first().map(|(_, v)| v.len()));
        if values.is_empty() || expected.is_some_and(|w| w != values.len()) {
            return Err(Error::format(
                source,
                format!(
                    "line {}: {} values, expected {:?}",
                    n + 1,
                    values.len(),
                    expected
                ),
            ));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::format(
                source,
                format!("line {}: duplicate id `{id}`", n + 1),
            ));
        }
        out.push((id, values));
    }
    Ok(out)
}

pub fn read_vectors(
    path: impl AsRef<Path>,
    width: Option<usize>,
) -> Result<Vec<(String, Vec<f64>)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(&text, width, &path.display().to_string())
}

/// Writes `id<TAB>task<TAB>value` rows, one per instance and task.
pub fn format_predictions(
    ids: &[String],
    tasks: &[TaskSpec],
    predictions: &[Vec<Prediction>],
) -> String {
    let mut out = String::new();
    for (id, row) in ids.iter().zip(predictions) {
        for (task, p) in tasks.iter().zip(row) {
            writeln!(out, "{id}\t{}\t{}", task.name, p.render()).unwrap();
        }
    }
    out
}

/// Reads `id<TAB>task<TAB>value` rows (an `id task value` header is allowed)
/// and lines them up with `ids` in task order. Every id needs a value for
/// every task.
pub fn parse_predictions(
    text: &str,
    ids: &[String],
    tasks: &[TaskSpec],
    source: &str,
) -> Result<Vec<Vec<Prediction>>> {
    let mut values: HashMap<(&str, &str), &str> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("id\t")) {
            continue;
        }
        let [id, task, value] = line.split('\t').collect::<Vec<_>>()[..] else {
            return Err(Error::format(
                source,
                format!("line {}: expected 3 fields", n + 1),
            ));
        };
        if !tasks.iter().any(|t| t.name == task) {
            return Err(Error::format(
                source,
                format!("line {}: unknown task `{task}`", n + 1),
            ));
        }
        if values.insert((id, task), value.trim()).is_some() {
            return Err(Error::format(
                source,
                format!("line {}: duplicate `{id}` `{task}`", n + 1),
            ));
        }
    }
    ids.iter()
        .map(|id| {
            tasks
                .iter()
                .map(|task| {
                    let raw = values
                        .get(&(id.as_str(), task.name.as_str()))
                        .ok_or_else(|| Error::Alignment {
                            id: id.clone(),
                            source_name: format!("{source} (task {})", task.name),
                        })?;
                    parse_prediction(task, raw).ok_or_else(|| {
                        Error::format(
                            source,
                            format!("`{raw}` is not a {} value for `{id}`", task.name),
                        )
                    })
                })
                .collect()
        })
        .collect()
}

fn parse_prediction(task: &TaskSpec, raw: &str) -> Option<Prediction> {
    match &task.kind {
        TaskKind::Classification { classes } => {
            let index = task.class_index(raw)?;
            let mut distribution = vec![0.0; classes.len()];
            distribution[index] = 1.0;
            Some(Prediction::Class {
                index,
                label: classes[index].clone(),
                distribution,
            })
        }
        TaskKind::Regression => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Prediction::Score),
    }
}

pub fn read_predictions(
    path: impl AsRef<Path>,
    ids: &[String],
    tasks: &[TaskSpec],
) -> Result<Vec<Vec<Prediction>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, ids, tasks, &path.display().to_string())
}

/// A parameter set with the JSON descriptor of the architecture it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub params: ParamSet,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MTENSCK1";

impl Checkpoint {
    pub fn new<D: Serialize>(descriptor: &D, params: &ParamSet) -> Result<Self> {
        let descriptor = serde_json::to_string(descriptor)
            .map_err(|e| Error::Data(format!("cannot encode descriptor: {e}")))?;
        Ok(Self {
            descriptor,
            params: params.clone(),
        })
    }

    /// Layout: magic, descriptor length and UTF-8 bytes, tensor count, then per
    /// tensor its name, rank, extents and little-endian `f64` values. All
    /// integers are little-endian `u64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put = |out: &mut Vec<u8>, n: usize| out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put(&mut out, self.descriptor.len());
        out.extend_from_slice(self.descriptor.as_bytes());
        put(&mut out, self.params.len());
        for (name, t) in self.params.iter() {
            put(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put(&mut out, t.shape().len());
            t.shape().iter().for_each(|&d| put(&mut out, d));
            t.data()
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            source,
        };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format(source, "not a checkpoint (bad magic)"));
        }
        let len = r.usize()?;
        let descriptor = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::format(source, "descriptor is not UTF-8"))?;
        let count = r.usize()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = r.usize()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format(source, "tensor name is not UTF-8"))?;
            let rank = r.usize()?;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::format(source, "tensor extent overflow"))?;
            let raw = r.take(
                n.checked_mul(8)
                    .ok_or_else(|| Error::format(source, "tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(data, shape).map_err(|e| Error::format(source, e.to_string()))?;
            params.add(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(source, "trailing bytes"));
        }
        Ok(Self { descriptor, params })
    }

    /// Parses the descriptor and checks it against `expected`.
    pub fn descriptor_as<D: for<'de> Deserialize<'de> + Serialize + PartialEq>(
        &self,
        expected: Option<&D>,
    ) -> Result<D> {
        let found: D = serde_json::from_str(&self.descriptor).map_err(|e| Error::Incompatible {
            expected: expected
                .map(|d| serde_json::to_string(d).unwrap_or_default())
                .unwrap_or_else(|| std::any::type_name::<D>().to_string()),
            found: format!("{} ({e})", self.descriptor),
        })?;
        if let Some(exp) = expected {
            if exp != &found {
                return Err(Error::Incompatible {
                    expected: serde_json::to_string(exp).unwrap_or_default(),
                    found: self.descriptor.clone(),
                });
            }
        }
        Ok(found)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.source, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn usize(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        usize::try_from(u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .map_err(|_| Error::format(self.source, "length overflow"))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, &path.display().to_string())
}

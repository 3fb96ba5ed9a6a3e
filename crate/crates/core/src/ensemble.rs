//! Stacked MLP over the three encoder representations and the feature block:
//! dense(256) → dense(128) shared, then dense(64) → dense(32) → head per task.

use std::collections::HashMap;
use std::fmt;

use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::data::Checkpoint;
use crate::error::{Error, Result};
use crate::features::Projector;
use crate::layers::{Dense, DROPOUT_RATE, REPRESENTATION_WIDTH};
use crate::params::ParamSet;
use crate::rng::SeededRng;
use crate::task::{Prediction, Target, TaskSpec};
use crate::tensor::Tensor;
use crate::train::{self, History, Network, TaskHead, TrainConfig};

pub const SHARED_WIDTHS: [usize; 2] = [256, 128];
pub const TASK_WIDTHS: [usize; 2] = [64, 32];
/// Width of the three encoder blocks together.
pub const REPS_WIDTH: usize = 3 * REPRESENTATION_WIDTH;

/// Input blocks in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Lstm,
    Cnn,
    Gru,
    Features,
}

impl Block {
    pub const ORDER: [Block; 4] = [Block::Lstm, Block::Cnn, Block::Gru, Block::Features];
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Lstm => "lstm",
            Block::Cnn => "cnn",
            Block::Gru => "gru",
            Block::Features => "features",
        })
    }
}

/// Vectors keyed by instance id, as read from a dump.
pub type KeyedRows = [(String, Vec<f64>)];

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleInput {
    pub ids: Vec<String>,
    /// `[lstm | cnn | gru | features]` per instance.
    pub rows: Vec<Vec<f64>>,
    pub feature_width: usize,
}

impl EnsembleInput {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        REPS_WIDTH + self.feature_width
    }

    /// Rows for a subset of ids, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<EnsembleInput> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.rows[i].clone())
                    .ok_or_else(|| Error::Alignment {
                        id: id.clone(),
                        source_name: "ensemble input".into(),
                    })
            })
            .collect::<Result<_>>()?;
        Ok(EnsembleInput {
            ids: ids.to_vec(),
            rows,
            feature_width: self.feature_width,
        })
    }
}

/// Joins the four sources by id. Every block must appear exactly once; the
/// encoder blocks must be 128 wide. With `ids` the rows follow that order;
/// otherwise every id seen in any source is used, in first-seen order over
/// the fixed block order. An id missing from any source is an alignment error.
pub fn assemble(ids: Option<&[String]>, sources: &[(Block, &KeyedRows)]) -> Result<EnsembleInput> {
    let mut by_block: Vec<(Block, &KeyedRows)> = sources.to_vec();
    by_block.sort_by_key(|(b, _)| *b);
    let blocks: Vec<Block> = by_block.iter().map(|(b, _)| *b).collect();
    if blocks != Block::ORDER {
        return Err(Error::Usage(format!(
            "need exactly one source per block {:?}, got {blocks:?}",
            Block::ORDER
        )));
    }
    let maps: Vec<HashMap<&str, &[f64]>> = by_block
        .iter()
        .map(|(_, rows)| {
            rows.iter()
                .map(|(id, v)| (id.as_str(), v.as_slice()))
                .collect()
        })
        .collect();
    let all_ids: Vec<String> = match ids {
        Some(ids) => ids.to_vec(),
        None => {
            let mut seen = std::collections::HashSet::new();
            by_block
                .iter()
                .flat_map(|(_, rows)| rows.iter().map(|(id, _)| id))
                .filter(|id| seen.insert(id.as_str()))
                .cloned()
                .collect()
        }
    };
    let feature_width = by_block[3]
        .1
        .first()
        .map_or(REPRESENTATION_WIDTH, |(_, v)| v.len());
    let mut rows = Vec::with_capacity(all_ids.len());
    for id in &all_ids {
        let mut row = Vec::with_capacity(REPS_WIDTH + feature_width);
        for ((block, _), map) in by_block.iter().zip(&maps) {
            let v = map.get(id.as_str()).ok_or_else(|| Error::Alignment {
                id: id.clone(),
                source_name: format!("the {block} source"),
            })?;
            let expected = if *block == Block::Features {
                feature_width
            } else {
                REPRESENTATION_WIDTH
            };
            if v.len() != expected {
                return Err(Error::dims(
                    &[expected],
                    &[v.len()],
                    "ensemble source block",
                ));
            }
            row.extend_from_slice(v);
        }
        rows.push(row);
    }
    Ok(EnsembleInput {
        ids: all_ids,
        rows,
        feature_width,
    })
}

/// How the feature block enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FeatureMode {
    /// Already 128 wide; used as is.
    Projected,
    /// Raw hand-crafted vector of this width, projected to 128 by an MLP that
    /// trains with the ensemble.
    Raw { width: usize },
}

impl FeatureMode {
    pub fn input_width(self) -> usize {
        match self {
            FeatureMode::Projected => REPRESENTATION_WIDTH,
            FeatureMode::Raw { width } => width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleDescriptor {
    pub tasks: Vec<TaskSpec>,
    pub features: FeatureMode,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    descriptor: EnsembleDescriptor,
    params: ParamSet,
    projector: Option<Projector>,
    shared: Vec<Dense>,
    heads: Vec<TaskHead>,
}

impl EnsembleModel {
    pub fn new(descriptor: EnsembleDescriptor) -> Result<Self> {
        if descriptor.tasks.is_empty() {
            return Err(Error::Config("an ensemble needs at least one task".into()));
        }
        let mut rng = SeededRng::new(descriptor.seed);
        let mut params = ParamSet::new();
        let projector = match descriptor.features {
            FeatureMode::Projected => None,
            FeatureMode::Raw { width: 0 } => {
                return Err(Error::Config("raw feature width must be positive".into()))
            }
            FeatureMode::Raw { width } => Some(Projector::new(&mut params, width, &mut rng)),
        };
        let mut shared = Vec::new();
        let mut width = REPS_WIDTH + REPRESENTATION_WIDTH;
        for (i, &w) in SHARED_WIDTHS.iter().enumerate() {
            shared.push(Dense::new(
                &mut params,
                &format!("ens.shared.{i}"),
                width,
                w,
                Activation::Relu,
                &mut rng,
            ));
            width = w;
        }
        let heads = descriptor
            .tasks
            .iter()
            .map(|t| {
                let mut w_in = width;
                let hidden = TASK_WIDTHS
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let d = Dense::new(
                            &mut params,
                            &format!("ens.task.{}.{i}", t.name),
                            w_in,
                            w,
                            Activation::Relu,
                            &mut rng,
                        );
                        w_in = w;
                        d
                    })
                    .collect();
                TaskHead {
                    hidden,
                    output: Dense::zeroed(
                        &mut params,
                        &format!("ens.task.{}.output", t.name),
                        w_in,
                        t.output_width(),
                        t.head_activation(),
                    ),
                    dropout: 0.0,
                }
            })
            .collect();
        let model = Self {
            descriptor,
            params,
            projector,
            shared,
            heads,
        };
        info!("ensemble: {} parameters", model.params.scalar_count());
        Ok(model)
    }

    pub fn descriptor(&self) -> &EnsembleDescriptor {
        &self.descriptor
    }

    pub fn input_width(&self) -> usize {
        REPS_WIDTH + self.descriptor.features.input_width()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Hidden layers between the input and each head.
    pub fn path_depths(&self) -> Vec<(usize, usize)> {
        self.heads
            .iter()
            .map(|h| (self.shared.len(), h.hidden.len()))
            .collect()
    }

    /// Parameter-name prefix of task `k`'s layers.
    pub fn head_prefix(&self, k: usize) -> String {
        format!("ens.task.{}.", self.descriptor.tasks[k].name)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(&self.descriptor, &self.params)
    }

    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        expected: Option<&EnsembleDescriptor>,
    ) -> Result<Self> {
        let descriptor: EnsembleDescriptor = ckpt.descriptor_as(expected)?;
        let mut model = Self::new(descriptor)?;
        model.params.load_from(&ckpt.params)?;
        Ok(model)
    }

    fn check_input(&self, input: &EnsembleInput) -> Result<()> {
        if input.width() != self.input_width() {
            return Err(Error::dims(
                &[self.input_width()],
                &[input.width()],
                "ensemble input width",
            ));
        }
        Ok(())
    }

    pub fn train(
        &mut self,
        input: &EnsembleInput,
        targets: &[Vec<Target>],
        validation: Option<(&EnsembleInput, &[Vec<Target>])>,
        config: &TrainConfig,
    ) -> Result<History> {
        self.check_input(input)?;
        if let Some((v, _)) = validation {
            self.check_input(v)?;
        }
        let val = validation.map(|(v, t)| (v.rows.as_slice(), t));
        train::fit(self, &input.rows, targets, val, config)
    }

    pub fn predict(
        &self,
        input: &EnsembleInput,
        batch_size: usize,
    ) -> Result<Vec<Vec<Prediction>>> {
        self.check_input(input)?;
        train::predict(self, &input.rows, batch_size)
    }

    /// Raw head outputs per task, `[n, width]`.
    pub fn outputs(&self, input: &EnsembleInput, batch_size: usize) -> Result<Vec<Tensor>> {
        self.check_input(input)?;
        train::predict_outputs(self, &input.rows, batch_size)
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

pub fn train_ensemble(
    model: &mut EnsembleModel,
    input: &EnsembleInput,
    targets: &[Vec<Target>],
    validation: Option<(&EnsembleInput, &[Vec<Target>])>,
    config: &TrainConfig,
) -> Result<History> {
    model.train(input, targets, validation, config)
}

pub fn predict_ensemble(
    model: &EnsembleModel,
    input: &EnsembleInput,
) -> Result<Vec<Vec<Prediction>>> {
    model.predict(input, 256)
}

impl Network for EnsembleModel {
    type Input = Vec<f64>;

    fn tasks(&self) -> &[TaskSpec] {
        &self.descriptor.tasks
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        batch: &[&Vec<f64>],
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Vec<Var>> {
        let width = self.input_width();
        let mut data = Vec::with_capacity(batch.len() * width);
        for row in batch {
            if row.len() != width {
                return Err(Error::dims(&[width], &[row.len()], "ensemble row"));
            }
            data.extend_from_slice(row);
        }
        let x = tape.leaf(Tensor::new(data, vec![batch.len(), width])?);
        let mut h = match &self.projector {
            None => x,
            Some(p) => {
                let reps = tape.slice_cols(x, 0, REPS_WIDTH)?;
                let raw = tape.slice_cols(x, REPS_WIDTH, p.raw_width())?;
                let feat = p.forward(tape, pv, raw)?;
                tape.concat_cols(&[reps, feat])?
            }
        };
        for layer in &self.shared {
            h = layer.forward(tape, pv, h)?;
            h = tape.dropout(h, DROPOUT_RATE, training, rng)?;
        }
        self.heads
            .iter()
            .map(|head| head.forward(tape, pv, h, training, rng))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check_at;
    use crate::params::ParamId;
    use crate::task::Problem;

    fn keyed(ids: &[&str], width: usize, fill: f64) -> Vec<(String, Vec<f64>)> {
        ids.iter()
            .map(|id| (id.to_string(), vec![fill; width]))
            .collect()
    }

    #[test]
    fn assemble_layout() {
        let l = keyed(&["a"], 128, 1.0);
        let c = keyed(&["a"], 128, 2.0);
        let g = keyed(&["a"], 128, 3.0);
        let f = keyed(&["a"], 128, 4.0);
        let x = assemble(
            None,
            &[
                (Block::Lstm, &l),
                (Block::Cnn, &c),
                (Block::Gru, &g),
                (Block::Features, &f),
            ],
        )
        .unwrap();
        let y = assemble(
            None,
            &[
                (Block::Features, &f),
                (Block::Gru, &g),
                (Block::Lstm, &l),
                (Block::Cnn, &c),
            ],
        )
        .unwrap();
        assert_eq!(x, y);
        assert_eq!(x.rows[0].len(), 512);
        assert_eq!(x.rows[0][0], 1.0);
        assert_eq!(x.rows[0][128], 2.0);
        assert_eq!(x.rows[0][256], 3.0);
        assert_eq!(x.rows[0][511], 4.0);
        let z = keyed(&["a"], 128, 0.0);
        let zero = assemble(
            None,
            &[
                (Block::Lstm, &z),
                (Block::Cnn, &z),
                (Block::Gru, &z),
                (Block::Features, &z),
            ],
        )
        .unwrap();
        assert!(zero.rows[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assemble_alignment_error_names_id() {
        let full = keyed(&["a", "b"], 128, 0.5);
        let partial = keyed(&["a"], 128, 0.5);
        let err = assemble(
            None,
            &[
                (Block::Lstm, &full),
                (Block::Cnn, &full),
                (Block::Gru, &partial),
                (Block::Features, &full),
            ],
        )
        .unwrap_err();
        match err {
            Error::Alignment { id, source_name } => {
                assert_eq!(id, "b");
                assert!(source_name.contains("gru"));
            }
            e => panic!("{e}"),
        }
        assert!(assemble(None, &[(Block::Lstm, &full), (Block::Lstm, &full)]).is_err());
    }

    #[test]
    fn path_depth_and_heads() {
        let m = EnsembleModel::new(EnsembleDescriptor {
            tasks: Problem::FineEmotion.tasks(),
            features: FeatureMode::Projected,
            seed: 1,
        })
        .unwrap();
        assert_eq!(m.path_depths(), vec![(2, 2); 3]);
        let x = EnsembleInput {
            ids: vec!["a".into()],
            rows: vec![vec![0.1; 512]],
            feature_width: 128,
        };
        let p = m.predict(&x, 4).unwrap();
        assert_eq!(p[0].len(), 3);
        assert!(p[0]
            .iter()
            .all(|q| (0.0..=1.0).contains(&q.score().unwrap())));
    }

    #[test]
    fn heads_are_independent() {
        let mut m = EnsembleModel::new(EnsembleDescriptor {
            tasks: Problem::CoarseEmotion.tasks(),
            features: FeatureMode::Raw { width: 5 },
            seed: 2,
        })
        .unwrap();
        let mut rng = SeededRng::new(3);
        let x = EnsembleInput {
            ids: vec!["a".into(), "b".into()],
            rows: (0..2)
                .map(|_| (0..389).map(|_| rng.uniform(0.0, 1.0)).collect())
                .collect(),
            feature_width: 5,
        };
        let before = m.outputs(&x, 8).unwrap();
        let prefix = m.head_prefix(1);
        for name in m.params.names().to_vec() {
            if name.starts_with(&prefix) {
                m.params
                    .by_name_mut(&name)
                    .unwrap()
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v += 0.3);
            }
        }
        let after = m.outputs(&x, 8).unwrap();
        assert!(before[0].bit_eq(&after[0]));
        assert!(!before[1].bit_eq(&after[1]));
    }

    #[test]
    fn gradcheck_ensemble_mlp() {
        let mut m = EnsembleModel::new(EnsembleDescriptor {
            tasks: vec![
                TaskSpec::classification("c", ["x", "y", "z"]).unwrap(),
                TaskSpec::regression("r"),
            ],
            features: FeatureMode::Raw { width: 4 },
            seed: 11,
        })
        .unwrap();
        // Zero output weights would leave every earlier gradient at zero.
        let mut rng = SeededRng::new(5);
        for k in 0..m.params.len() {
            let output = m.params.names()[k].ends_with("output.weight");
            let t = m.params.get_mut(ParamId(k));
            if t.shape().len() == 1 {
                t.data_mut().iter_mut().for_each(|b| *b = 0.05);
            } else if output {
                t.data_mut()
                    .iter_mut()
                    .for_each(|w| *w = rng.uniform(-0.3, 0.3));
            }
        }
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..388).map(|_| rng.uniform(0.0, 1.0)).collect())
            .collect();
        let refs: Vec<&Vec<f64>> = rows.iter().collect();
        let gold_c = Tensor::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0], vec![2, 3]).unwrap();
        let gold_r = Tensor::new(vec![0.2, 0.7], vec![2, 1]).unwrap();
        for k in 0..m.params.len() {
            let p = m.params.get(ParamId(k)).clone();
            let coords: Vec<usize> = (0..p.len()).step_by((p.len() / 12).max(1)).collect();
            let err = gradient_check_at(
                |tape, v| {
                    let mut pv = m.params.leaves(tape);
                    pv[k] = v;
                    let outs = m.forward(tape, &pv, &refs, false, &mut SeededRng::new(0))?;
                    let a =
                        tape.loss(outs[0], &gold_c, crate::LossKind::CategoricalCrossEntropy)?;
                    let b = tape.loss(outs[1], &gold_r, crate::LossKind::MeanSquaredError)?;
                    tape.add(a, b)
                },
                &p,
                &coords,
            )
            .unwrap();
            assert!(err < 1e-4, "{}: {err}", m.params.names()[k]);
        }
    }

    /// Every block holds a one-hot copy of the gold class.
    fn one_hot_input(n: usize, k: usize) -> (EnsembleInput, Vec<Vec<Target>>) {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            let class = i % k;
            let mut row = vec![0.0; 512];
            for block in 0..4 {
                row[block * 128 + class] = 1.0;
            }
            ids.push(format!("i{i}"));
            rows.push(row);
            targets.push(vec![Target::Class(class)]);
        }
        let input = EnsembleInput {
            ids,
            rows,
            feature_width: 128,
        };
        (input, targets)
    }

    #[test]
    fn one_hot_copies_are_learned_quickly() {
        let tasks = vec![TaskSpec::classification("emotion", crate::task::EMOTIONS).unwrap()];
        let mut m = EnsembleModel::new(EnsembleDescriptor {
            tasks,
            features: FeatureMode::Projected,
            seed: 3,
        })
        .unwrap();
        let (x, y) = one_hot_input(64, 4);
        let config = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let h = m.train(&x, &y, None, &config).unwrap();
        assert_eq!(h.len(), 5);
        let p = m.predict(&x, 32).unwrap();
        let correct = p
            .iter()
            .zip(&y)
            .filter(|(p, y)| matches!(y[0], Target::Class(c) if p[0].class_index() == Some(c)))
            .count();
        assert_eq!(correct, 64);
    }

    #[test]
    fn masked_step_isolates_heads() {
        let mut m = EnsembleModel::new(EnsembleDescriptor {
            tasks: Problem::CoarseEmotion.tasks(),
            features: FeatureMode::Raw { width: 5 },
            seed: 8,
        })
        .unwrap();
        let mut rng = SeededRng::new(2);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..389).map(|_| rng.uniform(0.0, 1.0)).collect())
            .collect();
        let xs: Vec<&Vec<f64>> = rows.iter().collect();
        let y: Vec<Vec<Target>> = (0..4)
            .map(|i| vec![Target::Class(i), Target::Score(0.2 * i as f64)])
            .collect();
        let ys: Vec<&[Target]> = y.iter().map(Vec::as_slice).collect();
        let before = m.params.clone();
        let mut opt = crate::params::Optimizer::new(&m.params);
        train::train_step(
            &mut m,
            &mut opt,
            &xs,
            &ys,
            &[1.0, 1.0],
            &[false, true],
            &mut rng,
        )
        .unwrap();
        let (idle, active) = (m.head_prefix(0), m.head_prefix(1));
        for (name, t) in m.params.iter() {
            let old = before.by_name(name).unwrap();
            if name.starts_with(&idle) {
                assert!(t.bit_eq(old), "{name}");
            }
            if name.starts_with(&active) && name.ends_with("output.bias") {
                assert!(!t.bit_eq(old), "{name}");
            }
        }
    }

    #[test]
    fn same_seed_same_history() {
        let run = || {
            let tasks = vec![
                TaskSpec::classification("c", ["a", "b"]).unwrap(),
                TaskSpec::regression("r"),
            ];
            let mut m = EnsembleModel::new(EnsembleDescriptor {
                tasks,
                features: FeatureMode::Raw { width: 3 },
                seed: 5,
            })
            .unwrap();
            let mut rng = SeededRng::new(6);
            let x = EnsembleInput {
                ids: (0..10).map(|i| i.to_string()).collect(),
                rows: (0..10)
                    .map(|_| (0..387).map(|_| rng.uniform(0.0, 1.0)).collect())
                    .collect(),
                feature_width: 3,
            };
            let y: Vec<Vec<Target>> = (0..10)
                .map(|i| vec![Target::Class(i % 2), Target::Score(0.1 * i as f64)])
                .collect();
            let config = TrainConfig {
                epochs: 3,
                batch_size: 4,
                seed: 7,
                ..TrainConfig::default()
            };
            let h = m.train(&x, &y, Some((&x, &y)), &config).unwrap();
            (h.to_tsv(), m.to_checkpoint().unwrap().to_bytes())
        };
        assert_eq!(run(), run());
    }
}

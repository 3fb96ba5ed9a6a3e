//! One multi-task network per encoder: encoder → shared dense(128) →
//! per-task dense(100) → softmax or sigmoid head.

use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::data::Checkpoint;
use crate::embedding::{embed, EmbeddingTable, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::layers::{
    CellKind, CnnEncoder, Dense, RecurrentEncoder, DROPOUT_RATE, RECURRENT_LAYERS, RECURRENT_UNITS,
    REPRESENTATION_WIDTH, TASK_HIDDEN_WIDTH,
};
use crate::params::ParamSet;
use crate::rng::SeededRng;
use crate::task::{Prediction, Target, TaskSpec};
use crate::tensor::Tensor;
use crate::train::{self, History, Network, TaskHead, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Cnn,
    Lstm,
    Gru,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Lstm, EncoderKind::Cnn, EncoderKind::Gru];
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Cnn => "cnn",
            EncoderKind::Lstm => "lstm",
            EncoderKind::Gru => "gru",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(EncoderKind::Cnn),
            "lstm" => Ok(EncoderKind::Lstm),
            "gru" => Ok(EncoderKind::Gru),
            other => Err(Error::Usage(format!(
                "unknown encoder `{other}` (expected cnn, lstm or gru)"
            ))),
        }
    }
}

/// Everything needed to rebuild the architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub encoder: EncoderKind,
    pub tasks: Vec<TaskSpec>,
    pub input_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Encoder {
    Cnn(CnnEncoder),
    Recurrent(RecurrentEncoder),
}

impl Encoder {
    fn out_dim(&self) -> usize {
        match self {
            Encoder::Cnn(e) => e.out_dim(),
            Encoder::Recurrent(e) => e.out_dim(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiTaskModel {
    descriptor: ModelDescriptor,
    params: ParamSet,
    encoder: Encoder,
    shared: Dense,
    heads: Vec<TaskHead>,
}

/// 128-wide shared activation of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationRecord {
    pub id: String,
    pub values: Vec<f64>,
}

pub fn build_model(
    encoder: EncoderKind,
    tasks: Vec<TaskSpec>,
    table: &EmbeddingTable,
    seed: u64,
) -> Result<MultiTaskModel> {
    MultiTaskModel::new(ModelDescriptor {
        encoder,
        tasks,
        input_dim: table.dim(),
        max_len: DEFAULT_MAX_LEN,
        seed,
    })
}

impl MultiTaskModel {
    pub fn new(descriptor: ModelDescriptor) -> Result<Self> {
        if descriptor.tasks.is_empty() {
            return Err(Error::Config("a model needs at least one task".into()));
        }
        if descriptor.input_dim == 0 || descriptor.max_len == 0 {
            return Err(Error::Config(format!(
                "input dim {} and max length {} must be positive",
                descriptor.input_dim, descriptor.max_len
            )));
        }
        let mut rng = SeededRng::new(descriptor.seed);
        let mut params = ParamSet::new();
        let d = descriptor.input_dim;
        let encoder = match descriptor.encoder {
            EncoderKind::Cnn => Encoder::Cnn(CnnEncoder::new(&mut params, d, &mut rng)),
            EncoderKind::Lstm => Encoder::Recurrent(RecurrentEncoder::new(
                &mut params,
                CellKind::Lstm,
                d,
                RECURRENT_UNITS,
                RECURRENT_LAYERS,
                &mut rng,
            )),
            EncoderKind::Gru => Encoder::Recurrent(RecurrentEncoder::new(
                &mut params,
                CellKind::Gru,
                d,
                RECURRENT_UNITS,
                RECURRENT_LAYERS,
                &mut rng,
            )),
        };
        let shared = Dense::new(
            &mut params,
            "shared",
            encoder.out_dim(),
            REPRESENTATION_WIDTH,
            Activation::Relu,
            &mut rng,
        );
        let heads = descriptor
            .tasks
            .iter()
            .map(|t| TaskHead {
                hidden: vec![Dense::new(
                    &mut params,
                    &format!("task.{}.hidden", t.name),
                    REPRESENTATION_WIDTH,
                    TASK_HIDDEN_WIDTH,
                    Activation::Relu,
                    &mut rng,
                )],
                output: Dense::zeroed(
                    &mut params,
                    &format!("task.{}.output", t.name),
                    TASK_HIDDEN_WIDTH,
                    t.output_width(),
                    t.head_activation(),
                ),
                dropout: DROPOUT_RATE,
            })
            .collect();
        let model = Self {
            descriptor,
            params,
            encoder,
            shared,
            heads,
        };
        info!(
            "{} model: {} parameters over {} tensors",
            model.descriptor.encoder,
            model.parameter_count(),
            model.params.len()
        );
        Ok(model)
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn encoder_kind(&self) -> EncoderKind {
        self.descriptor.encoder
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Parameter-name prefix of task `k`'s head.
    pub fn head_prefix(&self, k: usize) -> String {
        format!("task.{}.", self.descriptor.tasks[k].name)
    }

    /// Replaces the parameters, which must match this architecture.
    pub fn load_params(&mut self, params: &ParamSet) -> Result<()> {
        self.params.load_from(params)
    }

    /// Padded, truncated embedding matrices `[max_len, dim]`, one per instance.
    pub fn encode_inputs(
        &self,
        tokens: &[Vec<String>],
        table: &EmbeddingTable,
    ) -> Result<Vec<Tensor>> {
        if table.dim() != self.descriptor.input_dim {
            return Err(Error::dims(
                &[self.descriptor.input_dim],
                &[table.dim()],
                "embedding width",
            ));
        }
        Ok(tokens
            .iter()
            .map(|t| embed(t, table, self.descriptor.max_len))
            .collect())
    }

    fn stack(&self, batch: &[&Tensor]) -> Result<Tensor> {
        let (l, d) = (self.descriptor.max_len, self.descriptor.input_dim);
        let mut data = Vec::with_capacity(batch.len() * l * d);
        for x in batch {
            if x.shape() != [l, d] {
                return Err(Error::dims(&[l, d], x.shape(), "encoded instance"));
            }
            data.extend_from_slice(x.data());
        }
        Tensor::new(data, vec![batch.len() * l, d])
    }

    fn representation_node(&self, tape: &mut Tape, pv: &[Var], batch: &[&Tensor]) -> Result<Var> {
        let x = tape.leaf(self.stack(batch)?);
        let (b, l) = (batch.len(), self.descriptor.max_len);
        let h = match &self.encoder {
            Encoder::Cnn(e) => e.forward(tape, pv, x, b, l)?,
            Encoder::Recurrent(e) => e.forward(tape, pv, x, b, l)?,
        };
        self.shared.forward(tape, pv, h)
    }

    /// Shared 128-wide activations with dropout off, keyed by id.
    pub fn extract_representation(
        &self,
        ids: &[String],
        inputs: &[Tensor],
        batch_size: usize,
    ) -> Result<Vec<RepresentationRecord>> {
        if ids.len() != inputs.len() {
            return Err(Error::dims(&[ids.len()], &[inputs.len()], "ids vs inputs"));
        }
        let mut out = Vec::with_capacity(ids.len());
        for (id_chunk, chunk) in ids
            .chunks(batch_size.max(1))
            .zip(inputs.chunks(batch_size.max(1)))
        {
            let xs: Vec<&Tensor> = chunk.iter().collect();
            let mut tape = Tape::new();
            let pv = self.params.leaves(&mut tape);
            let r = self.representation_node(&mut tape, &pv, &xs)?;
            let value = tape.value(r);
            for (i, id) in id_chunk.iter().enumerate() {
                out.push(RepresentationRecord {
                    id: id.clone(),
                    values: value.row(i).to_vec(),
                });
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(&self.descriptor, &self.params)
    }

    /// Rebuilds the model from a checkpoint, optionally insisting on a
    /// particular architecture.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&ModelDescriptor>) -> Result<Self> {
        let descriptor: ModelDescriptor = ckpt.descriptor_as(expected)?;
        let mut model = Self::new(descriptor)?;
        model.params.load_from(&ckpt.params)?;
        Ok(model)
    }

    pub fn train(
        &mut self,
        train_inputs: &[Tensor],
        train_targets: &[Vec<Target>],
        validation: Option<(&[Tensor], &[Vec<Target>])>,
        config: &TrainConfig,
    ) -> Result<History> {
        train::fit(self, train_inputs, train_targets, validation, config)
    }

    pub fn predict(&self, inputs: &[Tensor], batch_size: usize) -> Result<Vec<Vec<Prediction>>> {
        train::predict(self, inputs, batch_size)
    }
}

impl Network for MultiTaskModel {
    type Input = Tensor;

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
        batch: &[&Tensor],
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Vec<Var>> {
        let rep = self.representation_node(tape, pv, batch)?;
        let rep = tape.dropout(rep, DROPOUT_RATE, training, rng)?;
        self.heads
            .iter()
            .map(|h| h.forward(tape, pv, rep, training, rng))
            .collect()
    }
}

//! Multi-task emotion and sentiment modelling.
//!
//! Three multi-task encoders (CNN, LSTM, GRU) are trained separately, their
//! shared 128-wide activations are extracted, and a stacked MLP combines them
//! with a projected hand-crafted feature vector to predict every task at once.

pub mod autodiff;
pub mod data;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod layers;
pub mod multitask;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod synthetic;
pub mod task;
pub mod tensor;
pub mod train;

pub use autodiff::{Activation, LossKind, Tape, Var};
pub use data::{Checkpoint, Instance, Schema};
pub use embedding::{EmbeddingTable, OovPolicy};
pub use ensemble::{
    assemble, Block, EnsembleDescriptor, EnsembleInput, EnsembleModel, FeatureMode,
};
pub use error::{Error, Result};
pub use multitask::{
    build_model, EncoderKind, ModelDescriptor, MultiTaskModel, RepresentationRecord,
};
pub use params::ParamSet;
pub use rng::SeededRng;
pub use task::{Prediction, Problem, Target, TaskKind, TaskSpec};
pub use tensor::Tensor;
pub use train::{History, Network, TrainConfig};

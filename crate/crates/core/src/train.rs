//! Mini-batch Adam training shared by the base models and the ensemble.

use std::fmt::Write as _;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::Dense;
use crate::params::{Optimizer, ParamSet};
use crate::rng::SeededRng;
use crate::task::{Prediction, Target, TaskSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Per-task loss weights; `None` weighs every task 1.0.
    pub task_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            patience: 5,
            task_weights: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self, tasks: usize) -> Result<Vec<f64>> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        match &self.task_weights {
            None => Ok(vec![1.0; tasks]),
            Some(w) if w.len() != tasks => Err(Error::Config(format!(
                "{} task weights for {tasks} tasks",
                w.len()
            ))),
            Some(w) if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) => Err(Error::Config(
                format!("task weights must be positive, got {w:?}"),
            )),
            Some(w) => Ok(w.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub tasks: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// One row per epoch: `epoch`, `train_<task>`…, `val_<task>`….
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch");
        for t in &self.tasks {
            write!(out, "\ttrain_{t}").unwrap();
        }
        for t in &self.tasks {
            write!(out, "\tval_{t}").unwrap();
        }
        out.push('\n');
        for e in &self.epochs {
            write!(out, "{}", e.epoch).unwrap();
            for v in &e.train_loss {
                write!(out, "\t{v}").unwrap();
            }
            match &e.val_loss {
                Some(vals) => vals.iter().for_each(|v| write!(out, "\t{v}").unwrap()),
                None => self.tasks.iter().for_each(|_| out.push_str("\tNA")),
            }
            out.push('\n');
        }
        out
    }
}

/// A model with one output head per task.
pub trait Network {
    type Input;

    fn tasks(&self) -> &[TaskSpec];
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// One output node per task, each `[batch, output_width]`.
    fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        batch: &[&Self::Input],
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Vec<Var>>;
}

/// Hidden layers for one task followed by its output layer.
#[derive(Debug, Clone)]
pub struct TaskHead {
    pub hidden: Vec<Dense>,
    pub output: Dense,
    pub dropout: f64,
}

impl TaskHead {
    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x: Var,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let mut h = x;
        for layer in &self.hidden {
            h = layer.forward(tape, pv, h)?;
            h = tape.dropout(h, self.dropout, training, rng)?;
        }
        self.output.forward(tape, pv, h)
    }
}

#[allow(clippy::too_many_arguments)]
/// Per-task losses of one batch; the joint loss node is `Σ weight·loss` over
/// tasks selected by `mask`.
pub fn batch_loss<N: Network>(
    net: &N,
    tape: &mut Tape,
    pv: &[Var],
    inputs: &[&N::Input],
    targets: &[&[Target]],
    weights: &[f64],
    mask: &[bool],
    training: bool,
    rng: &mut SeededRng,
) -> Result<(Var, Vec<f64>)> {
    let outputs = net.forward(tape, pv, inputs, training, rng)?;
    let mut joint: Option<Var> = None;
    let mut values = Vec::with_capacity(outputs.len());
    for (k, (task, &out)) in net.tasks().iter().zip(&outputs).enumerate() {
        let gold = task.gold(targets.iter().map(|t| &t[k]))?;
        let l = tape.loss(out, &gold, task.loss_kind())?;
        values.push(tape.value(l).data()[0]);
        if mask[k] {
            let wl = tape.scale(l, weights[k]);
            joint = Some(match joint {
                Some(j) => tape.add(j, wl)?,
                None => wl,
            });
        }
    }
    let joint = joint.ok_or_else(|| Error::Usage("no task selected for the loss".into()))?;
    Ok((joint, values))
}

/// Backpropagates the masked joint loss of one batch into the parameter
/// gradients and returns the per-task losses. Parameters do not move.
pub fn compute_gradients<N: Network>(
    net: &mut N,
    inputs: &[&N::Input],
    targets: &[&[Target]],
    weights: &[f64],
    mask: &[bool],
    rng: &mut SeededRng,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let pv = net.params().leaves(&mut tape);
    let (joint, values) = batch_loss(
        &*net, &mut tape, &pv, inputs, targets, weights, mask, true, rng,
    )?;
    let total = tape.value(joint).data()[0];
    let grads = tape.backward(joint);
    net.params_mut().store_grads(&grads, &pv);
    Ok((total, values))
}

/// One Adam step on the masked joint loss of a batch.
pub fn train_step<N: Network>(
    net: &mut N,
    optimizer: &mut Optimizer,
    inputs: &[&N::Input],
    targets: &[&[Target]],
    weights: &[f64],
    mask: &[bool],
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let (_, values) = compute_gradients(net, inputs, targets, weights, mask, rng)?;
    optimizer.step(net.params_mut())?;
    net.params_mut().clear_grads();
    Ok(values)
}

fn check_targets<N: Network>(net: &N, inputs: usize, targets: &[Vec<Target>]) -> Result<()> {
    if inputs != targets.len() {
        return Err(Error::dims(
            &[inputs],
            &[targets.len()],
            "inputs vs targets",
        ));
    }
    if inputs == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    let n = net.tasks().len();
    if let Some(bad) = targets.iter().find(|t| t.len() != n) {
        return Err(Error::Data(format!(
            "instance has {} targets, model has {n} tasks",
            bad.len()
        )));
    }
    Ok(())
}

/// Mean per-task loss over a data set, dropout off.
pub fn evaluate_loss<N: Network>(
    net: &N,
    inputs: &[N::Input],
    targets: &[Vec<Target>],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let n_tasks = net.tasks().len();
    let mut sums = vec![0.0; n_tasks];
    let mut rng = SeededRng::new(0);
    let ones = vec![1.0; n_tasks];
    let mask = vec![true; n_tasks];
    for start in (0..inputs.len()).step_by(batch_size) {
        let end = (start + batch_size).min(inputs.len());
        let xs: Vec<&N::Input> = inputs[start..end].iter().collect();
        let ys: Vec<&[Target]> = targets[start..end].iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let pv = net.params().leaves(&mut tape);
        let (_, values) = batch_loss(net, &mut tape, &pv, &xs, &ys, &ones, &mask, false, &mut rng)?;
        for (s, v) in sums.iter_mut().zip(values) {
            *s += v * (end - start) as f64;
        }
    }
    Ok(sums.into_iter().map(|s| s / inputs.len() as f64).collect())
}

/// Held-out inputs and their targets.
pub type Validation<'a, I> = Option<(&'a [I], &'a [Vec<Target>])>;

/// Trains with shuffled mini-batches. With a validation set, stops after
/// `patience` epochs without improvement of the weighted validation loss and
/// restores the best parameters.
pub fn fit<N: Network>(
    net: &mut N,
    train_inputs: &[N::Input],
    train_targets: &[Vec<Target>],
    validation: Validation<'_, N::Input>,
    config: &TrainConfig,
) -> Result<History> {
    let n_tasks = net.tasks().len();
    let weights = config.weights(n_tasks)?;
    check_targets(net, train_inputs.len(), train_targets)?;
    if let Some((vx, vy)) = validation {
        check_targets(net, vx.len(), vy)?;
    }
    let mask = vec![true; n_tasks];
    let mut rng = SeededRng::new(config.seed);
    let mut optimizer = Optimizer::new(net.params());
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut history = History {
        tasks: net.tasks().iter().map(|t| t.name.clone()).collect(),
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, ParamSet)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut sums = vec![0.0; n_tasks];
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let xs: Vec<&N::Input> = chunk.iter().map(|&i| &train_inputs[i]).collect();
            let ys: Vec<&[Target]> = chunk.iter().map(|&i| train_targets[i].as_slice()).collect();
            let (total, values) = compute_gradients(net, &xs, &ys, &weights, &mask, &mut rng)?;
            if !total.is_finite() || !net.params().grads_finite() {
                return Err(Error::NumericFailure {
                    epoch,
                    batch: b + 1,
                });
            }
            optimizer.step(net.params_mut())?;
            net.params_mut().clear_grads();
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v * chunk.len() as f64;
            }
        }
        let train_loss: Vec<f64> = sums.iter().map(|s| s / order.len() as f64).collect();
        let val_loss = match validation {
            Some((vx, vy)) => Some(evaluate_loss(net, vx, vy, config.batch_size)?),
            None => None,
        };
        debug!("epoch {epoch}: train {train_loss:?} val {val_loss:?}");
        let monitored: f64 = val_loss
            .as_ref()
            .unwrap_or(&train_loss)
            .iter()
            .zip(&weights)
            .map(|(l, w)| l * w)
            .sum();
        if !monitored.is_finite() {
            return Err(Error::NumericFailure { epoch, batch: 0 });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _)| monitored < *b) {
            best = Some((monitored, net.params().clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if validation.is_some() && stale >= config.patience {
                info!(
                    "early stop after epoch {epoch}, best epoch {}",
                    history.best_epoch
                );
                break;
            }
        }
    }
    if validation.is_some() {
        if let Some((_, params)) = best {
            net.params_mut().load_from(&params)?;
        }
    } else {
        history.best_epoch = history.epochs.len();
    }
    Ok(history)
}

/// Raw head outputs, one `[n, width]` tensor per task, dropout off.
pub fn predict_outputs<N: Network>(
    net: &N,
    inputs: &[N::Input],
    batch_size: usize,
) -> Result<Vec<Tensor>> {
    let n_tasks = net.tasks().len();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); n_tasks];
    let mut rng = SeededRng::new(0);
    for chunk in inputs.chunks(batch_size.max(1)) {
        let xs: Vec<&N::Input> = chunk.iter().collect();
        let mut tape = Tape::new();
        let pv = net.params().leaves(&mut tape);
        let outs = net.forward(&mut tape, &pv, &xs, false, &mut rng)?;
        for (d, o) in data.iter_mut().zip(outs) {
            d.extend_from_slice(tape.value(o).data());
        }
    }
    net.tasks()
        .iter()
        .zip(data)
        .map(|(t, d)| {
            let w = t.output_width();
            Tensor::new(d, vec![inputs.len(), w])
        })
        .collect()
}

/// Decoded predictions, indexed `[instance][task]`.
pub fn predict<N: Network>(
    net: &N,
    inputs: &[N::Input],
    batch_size: usize,
) -> Result<Vec<Vec<Prediction>>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let outputs = predict_outputs(net, inputs, batch_size)?;
    Ok((0..inputs.len())
        .map(|i| {
            net.tasks()
                .iter()
                .zip(&outputs)
                .map(|(t, o)| t.decode(o.row(i)))
                .collect()
        })
        .collect())
}

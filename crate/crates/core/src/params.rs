//! Named parameter storage shared by every trainable model.

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamState};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Glorot-uniform matrix `[fan_in, fan_out]`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut SeededRng,
    ) -> ParamId {
        self.add(name, glorot_uniform(fan_in, fan_out, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, len: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[len]))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on the tape as a leaf, in registration order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Stores gradients from a backward pass; parameters off the path get zeros.
    pub fn store_grads(&mut self, grads: &Gradients, vars: &[Var]) {
        for (tensor, &v) in self.tensors.iter_mut().zip(vars) {
            let g = grads
                .get(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tensor.len()]);
            tensor.set_grad(g).expect("gradient matches parameter");
        }
    }

    pub fn clear_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    pub fn grads_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.grad().is_none_or(|g| g.iter().all(|x| x.is_finite())))
    }

    /// Replaces values from another set with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Incompatible {
                expected: format!("{} parameters {:?}", self.len(), self.names),
                found: format!("{} parameters {:?}", other.len(), other.names),
            });
        }
        for ((dst, src), name) in self.tensors.iter_mut().zip(&other.tensors).zip(&self.names) {
            if dst.shape() != src.shape() {
                return Err(Error::Incompatible {
                    expected: format!("{name} {:?}", dst.shape()),
                    found: format!("{name} {:?}", src.shape()),
                });
            }
            *dst = src.clone();
            dst.clear_grad();
        }
        Ok(())
    }
}

pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-a, a)).collect();
    Tensor::new(data, vec![fan_in, fan_out]).expect("positive fan")
}

/// Adam over a whole [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            states: params.tensors.iter().map(AdamState::for_param).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (t, s) in params.tensors.iter_mut().zip(&mut self.states) {
            adam_step(t, s)?;
        }
        Ok(())
    }
}

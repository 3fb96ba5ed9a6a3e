//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order. Sequence tensors are stored as 2-D `[batch*time, channels]`
//! with rows grouped by instance (`row = b * time + t`); ops that need the
//! grouping take `batch` and `time` explicitly.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{as_matrix, kernels, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    /// Row-wise softmax of a 2-D tensor.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    CategoricalCrossEntropy,
    MeanSquaredError,
}

/// Additive constant inside the cross-entropy logarithm.
pub const CE_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    MaskMul(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Unfold {
        x: Var,
        batch: usize,
        time: usize,
        width: usize,
    },
    SliceTime {
        x: Var,
        batch: usize,
        time: usize,
        start: usize,
    },
    PadTimeFront {
        x: Var,
        batch: usize,
        time: usize,
    },
    MaxPoolTime {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    CrossEntropy {
        pred: Var,
        gold: Vec<f64>,
    },
    Mse {
        pred: Var,
        gold: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` means the node does not influence the differentiated scalar.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        let mut value = value;
        value.clear_grad();
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.value(a))?;
        let (k2, n) = as_matrix(self.value(b))?;
        if k != k2 {
            return Err(Error::dims(
                self.shape(a),
                self.shape(b),
                "matmul inner dimensions",
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
            &mut out,
        );
        Ok(self.push(Tensor::new(out, vec![m, n])?, Op::MatMul(a, b)))
    }

    /// `x[r, :] + bias` for every row `r`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(bias).len() != cols {
            return Err(Error::dims(self.shape(x), self.shape(bias), "bias width"));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            row.iter_mut().zip(&b).for_each(|(o, bb)| *o += bb);
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dims(self.shape(a), self.shape(b), "elementwise"));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(data, shape)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        Ok(match kind {
            Activation::Identity => x,
            Activation::Relu => {
                let out = self.value(x).map(|v| v.max(0.0));
                self.push(out, Op::Relu(x))
            }
            Activation::Sigmoid => {
                let out = self.value(x).map(sigmoid);
                self.push(out, Op::Sigmoid(x))
            }
            Activation::Tanh => {
                let out = self.value(x).map(f64::tanh);
                self.push(out, Op::Tanh(x))
            }
            Activation::Softmax => {
                let value = self.value(x);
                if value.shape().len() != 2 {
                    return Err(Error::dims(value.shape(), &[0, 0], "softmax expects 2-D"));
                }
                let cols = value.cols();
                let mut out = value.clone();
                for row in out.data_mut().chunks_mut(cols) {
                    softmax_in_place(row);
                }
                self.push(out, Op::Softmax(x))
            }
        })
    }

    /// Inverted dropout. Inference, or a zero rate, returns `x` unchanged.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        check_dropout_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
            .collect();
        let value = self.value(x);
        let data = value.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(data, value.shape().to_vec())?;
        Ok(self.push(out, Op::MaskMul(x, mask)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::dims(
                    self.shape(parts[0]),
                    self.shape(p),
                    "concat row count",
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(data, vec![rows, total])?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x);
        let cols = value.cols();
        if start + len > cols || len == 0 {
            return Err(Error::dims(value.shape(), &[start, len], "column slice"));
        }
        let rows = value.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&value.row(r)[start..start + len]);
        }
        let out = Tensor::new(data, vec![rows, len])?;
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    fn check_sequence(&self, x: Var, batch: usize, time: usize) -> Result<usize> {
        let value = self.value(x);
        if value.shape().len() != 2 || value.rows() != batch * time {
            return Err(Error::dims(
                value.shape(),
                &[batch * time, 0],
                "sequence layout",
            ));
        }
        Ok(value.cols())
    }

    /// Sliding windows of `width` time steps, flattened: row `(b, t)` holds
    /// `x[b, t..t+width]` concatenated.
    pub fn unfold(&mut self, x: Var, batch: usize, time: usize, width: usize) -> Result<Var> {
        let c = self.check_sequence(x, batch, time)?;
        if width == 0 || width > time {
            return Err(Error::dims(&[time], &[width], "unfold window"));
        }
        let out_t = time - width + 1;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * out_t * width * c);
        for b in 0..batch {
            for t in 0..out_t {
                let start = (b * time + t) * c;
                data.extend_from_slice(&src[start..start + width * c]);
            }
        }
        let out = Tensor::new(data, vec![batch * out_t, width * c])?;
        Ok(self.push(
            out,
            Op::Unfold {
                x,
                batch,
                time,
                width,
            },
        ))
    }

    pub fn slice_time(
        &mut self,
        x: Var,
        batch: usize,
        time: usize,
        start: usize,
        len: usize,
    ) -> Result<Var> {
        let c = self.check_sequence(x, batch, time)?;
        if len == 0 || start + len > time {
            return Err(Error::dims(&[time], &[start, len], "time slice"));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * len * c);
        for b in 0..batch {
            let from = (b * time + start) * c;
            data.extend_from_slice(&src[from..from + len * c]);
        }
        let out = Tensor::new(data, vec![batch * len, c])?;
        Ok(self.push(
            out,
            Op::SliceTime {
                x,
                batch,
                time,
                start,
            },
        ))
    }

    /// Prepends zero rows so every sequence has `new_time` steps.
    pub fn pad_time_front(
        &mut self,
        x: Var,
        batch: usize,
        time: usize,
        new_time: usize,
    ) -> Result<Var> {
        let c = self.check_sequence(x, batch, time)?;
        if new_time < time {
            return Err(Error::dims(&[time], &[new_time], "pad shrinks sequence"));
        }
        if new_time == time {
            return Ok(x);
        }
        let pad = new_time - time;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * new_time * c);
        for b in 0..batch {
            data.extend(std::iter::repeat_n(0.0, pad * c));
            data.extend_from_slice(&src[b * time * c..(b + 1) * time * c]);
        }
        let out = Tensor::new(data, vec![batch * new_time, c])?;
        Ok(self.push(out, Op::PadTimeFront { x, batch, time }))
    }

    /// Max over time windows, per channel. `window == stride == time` gives
    /// global max pooling. Ties resolve to the earliest step.
    pub fn max_pool_time(
        &mut self,
        x: Var,
        batch: usize,
        time: usize,
        window: usize,
        stride: usize,
    ) -> Result<Var> {
        let c = self.check_sequence(x, batch, time)?;
        if window == 0 || stride == 0 || window > time {
            return Err(Error::dims(&[time], &[window, stride], "pool window"));
        }
        let out_t = (time - window) / stride + 1;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(batch * out_t * c);
        let mut argmax = Vec::with_capacity(batch * out_t * c);
        for b in 0..batch {
            for o in 0..out_t {
                for ch in 0..c {
                    let mut best_idx = (b * time + o * stride) * c + ch;
                    let mut best = src[best_idx];
                    for w in 1..window {
                        let idx = (b * time + o * stride + w) * c + ch;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                    data.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let out = Tensor::new(data, vec![batch * out_t, c])?;
        Ok(self.push(out, Op::MaxPoolTime { x, argmax }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Batch-mean loss; returns a 1-element tensor.
    pub fn loss(&mut self, pred: Var, gold: &Tensor, kind: LossKind) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != gold.shape() {
            return Err(Error::dims(p.shape(), gold.shape(), "loss operands"));
        }
        let value = match kind {
            LossKind::CategoricalCrossEntropy => {
                let batch = p.rows() as f64;
                -p.data()
                    .iter()
                    .zip(gold.data())
                    .map(|(&q, &g)| if g == 0.0 { 0.0 } else { g * (q + CE_EPS).ln() })
                    .sum::<f64>()
                    / batch
            }
            LossKind::MeanSquaredError => {
                p.data()
                    .iter()
                    .zip(gold.data())
                    .map(|(&q, &g)| (q - g) * (q - g))
                    .sum::<f64>()
                    / p.len() as f64
            }
        };
        let gold = gold.data().to_vec();
        let op = match kind {
            LossKind::CategoricalCrossEntropy => Op::CrossEntropy { pred, gold },
            LossKind::MeanSquaredError => Op::Mse { pred, gold },
        };
        Ok(self.push(Tensor::scalar(value), op))
    }

    /// Differentiates the (scalar) node `output`. Non-scalar outputs are
    /// seeded with ones, which is the gradient of their sum.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0; self.nodes[output.0].value.len()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(val(*a)).expect("checked in forward");
                let n = val(*b).cols();
                let ga = slot(grads, *a, m * k);
                kernels::matmul_a_bt(g, val(*b).data(), m, k, n, ga);
                let gb = slot(grads, *b, k * n);
                kernels::matmul_at_b(val(*a).data(), g, m, k, n, gb);
            }
            Op::AddBias(x, bias) => {
                add_into(slot(grads, *x, g.len()), g);
                let cols = val(*bias).len();
                let gb = slot(grads, *bias, cols);
                for row in g.chunks(cols) {
                    add_into(gb, row);
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                let gb = slot(grads, *b, g.len());
                gb.iter_mut().zip(g).for_each(|(o, d)| *o -= d);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let ga = slot(grads, *a, g.len());
                for ((o, d), y) in ga.iter_mut().zip(g).zip(bv) {
                    *o += d * y;
                }
                let gb = slot(grads, *b, g.len());
                for ((o, d), x) in gb.iter_mut().zip(g).zip(av) {
                    *o += d * x;
                }
            }
            Op::Scale(x, c) => {
                let gx = slot(grads, *x, g.len());
                gx.iter_mut().zip(g).for_each(|(o, d)| *o += d * c);
            }
            Op::Relu(x) => {
                let xv = val(*x).data();
                let gx = slot(grads, *x, g.len());
                for ((o, d), &v) in gx.iter_mut().zip(g).zip(xv) {
                    if v > 0.0 {
                        *o += d;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let gx = slot(grads, *x, g.len());
                for ((o, d), &s) in gx.iter_mut().zip(g).zip(y) {
                    *o += d * s * (1.0 - s);
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let gx = slot(grads, *x, g.len());
                for ((o, d), &t) in gx.iter_mut().zip(g).zip(y) {
                    *o += d * (1.0 - t * t);
                }
            }
            Op::Softmax(x) => {
                let cols = node.value.cols();
                let gx = slot(grads, *x, g.len());
                for ((o_row, g_row), y_row) in gx
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(node.value.data().chunks(cols))
                {
                    let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                    for ((o, d), y) in o_row.iter_mut().zip(g_row).zip(y_row) {
                        *o += y * (d - dot);
                    }
                }
            }
            Op::MaskMul(x, mask) => {
                let gx = slot(grads, *x, g.len());
                for ((o, d), m) in gx.iter_mut().zip(g).zip(mask) {
                    *o += d * m;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).cols();
                    let gp = slot(grads, *p, rows * c);
                    for r in 0..rows {
                        add_into(
                            &mut gp[r * c..(r + 1) * c],
                            &g[r * total + offset..r * total + offset + c],
                        );
                    }
                    offset += c;
                }
            }
            Op::SliceCols(x, start) => {
                let len = node.value.cols();
                let cols = val(*x).cols();
                let gx = slot(grads, *x, val(*x).len());
                for (r, g_row) in g.chunks(len).enumerate() {
                    add_into(&mut gx[r * cols + start..r * cols + start + len], g_row);
                }
            }
            Op::Unfold {
                x,
                batch,
                time,
                width,
            } => {
                let c = val(*x).cols();
                let out_t = time - width + 1;
                let gx = slot(grads, *x, val(*x).len());
                let row_len = width * c;
                for b in 0..*batch {
                    for t in 0..out_t {
                        let g_row = &g[(b * out_t + t) * row_len..(b * out_t + t + 1) * row_len];
                        let start = (b * time + t) * c;
                        add_into(&mut gx[start..start + row_len], g_row);
                    }
                }
            }
            Op::SliceTime {
                x,
                batch,
                time,
                start,
            } => {
                let c = val(*x).cols();
                let len = node.value.rows() / batch;
                let gx = slot(grads, *x, val(*x).len());
                for b in 0..*batch {
                    let from = (b * time + start) * c;
                    add_into(
                        &mut gx[from..from + len * c],
                        &g[b * len * c..(b + 1) * len * c],
                    );
                }
            }
            Op::PadTimeFront { x, batch, time } => {
                let c = val(*x).cols();
                let new_time = node.value.rows() / batch;
                let pad = new_time - time;
                let gx = slot(grads, *x, val(*x).len());
                for b in 0..*batch {
                    let from = (b * new_time + pad) * c;
                    add_into(
                        &mut gx[b * time * c..(b + 1) * time * c],
                        &g[from..from + time * c],
                    );
                }
            }
            Op::MaxPoolTime { x, argmax } => {
                let gx = slot(grads, *x, val(*x).len());
                for (d, &idx) in g.iter().zip(argmax) {
                    gx[idx] += d;
                }
            }
            Op::Sum(x) => {
                let gx = slot(grads, *x, val(*x).len());
                gx.iter_mut().for_each(|o| *o += g[0]);
            }
            Op::CrossEntropy { pred, gold } => {
                let p = val(*pred);
                let batch = p.rows() as f64;
                let gp = slot(grads, *pred, p.len());
                for ((o, &q), &t) in gp.iter_mut().zip(p.data()).zip(gold) {
                    if t != 0.0 {
                        *o -= g[0] * t / ((q + CE_EPS) * batch);
                    }
                }
            }
            Op::Mse { pred, gold } => {
                let p = val(*pred);
                let n = p.len() as f64;
                let gp = slot(grads, *pred, p.len());
                for ((o, &q), &t) in gp.iter_mut().zip(p.data()).zip(gold) {
                    *o += g[0] * 2.0 * (q - t) / n;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

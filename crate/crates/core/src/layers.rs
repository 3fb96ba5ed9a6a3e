//! Trainable layers. Each layer holds [`ParamId`]s into a shared
//! [`ParamSet`] and records its forward pass on a [`Tape`], reading parameter
//! variables from the slice returned by [`ParamSet::leaves`].

use crate::autodiff::{Activation, Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamSet};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const CONV_WIDTHS: [usize; 3] = [2, 3, 4];
pub const CONV_FILTERS: usize = 100;
pub const RECURRENT_UNITS: usize = 128;
pub const RECURRENT_LAYERS: usize = 2;
pub const REPRESENTATION_WIDTH: usize = 128;
pub const TASK_HIDDEN_WIDTH: usize = 100;
pub const DROPOUT_RATE: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = params.add_glorot(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = params.add_zeros(format!("{name}.bias"), out_dim);
        Self {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    /// Same shapes as [`Dense::new`] with all-zero weights.
    pub fn zeroed(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]));
        let bias = params.add_zeros(format!("{name}.bias"), out_dim);
        Self {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    /// `activation(x · W + b)` for `x: [batch, in_dim]`.
    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var> {
        let z = tape.matmul(x, pv[self.weight.0])?;
        let z = tape.add_bias(z, pv[self.bias.0])?;
        tape.activation(z, self.activation)
    }
}

/// Eager dense layer on one vector: `weight` is `[n, m]`, `x` has `n` values.
pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor, activation: Activation) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().reshape(vec![1, x.len()])?);
    let w = tape.leaf(weight.clone());
    let b = tape.leaf(bias.clone());
    let z = tape.matmul(xv, w)?;
    let z = tape.add_bias(z, b)?;
    let y = tape.activation(z, activation)?;
    let out = tape.value(y).clone();
    let n = out.len();
    out.reshape(vec![n])
}

/// Parallel 1-D convolutions of several widths over a sequence, each with
/// bias and relu.
#[derive(Debug, Clone)]
pub struct ConvBank {
    pub widths: Vec<usize>,
    pub filters: usize,
    pub in_channels: usize,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl ConvBank {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        widths: &[usize],
        filters: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &w in widths {
            weights.push(params.add_glorot(
                format!("{name}.w{w}.weight"),
                w * in_channels,
                filters,
                rng,
            ));
            biases.push(params.add_zeros(format!("{name}.w{w}.bias"), filters));
        }
        Self {
            widths: widths.to_vec(),
            filters,
            in_channels,
            weights,
            biases,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.filters * self.widths.len()
    }

    /// Valid convolution of branch `i`; sequences shorter than the width are
    /// front-padded with zero rows. Returns the output and its length.
    fn branch(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x: Var,
        batch: usize,
        time: usize,
        i: usize,
    ) -> Result<(Var, usize)> {
        let width = self.widths[i];
        let (x, time) = if time < width {
            (tape.pad_time_front(x, batch, time, width)?, width)
        } else {
            (x, time)
        };
        let windows = tape.unfold(x, batch, time, width)?;
        let z = tape.matmul(windows, pv[self.weights[i].0])?;
        let z = tape.add_bias(z, pv[self.biases[i].0])?;
        Ok((tape.activation(z, Activation::Relu)?, time - width + 1))
    }

    /// Global max over time per branch, concatenated: `[batch, out_channels]`.
    pub fn forward_global(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x: Var,
        batch: usize,
        time: usize,
    ) -> Result<Var> {
        let mut pooled = Vec::with_capacity(self.widths.len());
        for i in 0..self.widths.len() {
            let (y, t) = self.branch(tape, pv, x, batch, time, i)?;
            pooled.push(tape.max_pool_time(y, batch, t, t, t)?);
        }
        tape.concat_cols(&pooled)
    }

    /// Branch outputs cut to the shortest branch length (keeping the final
    /// steps) and concatenated along channels: `[batch*len, out_channels]`.
    pub fn forward_aligned(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x: Var,
        batch: usize,
        time: usize,
    ) -> Result<(Var, usize)> {
        let mut outs = Vec::with_capacity(self.widths.len());
        for i in 0..self.widths.len() {
            outs.push(self.branch(tape, pv, x, batch, time, i)?);
        }
        let common = outs
            .iter()
            .map(|&(_, t)| t)
            .min()
            .expect("at least one width");
        let mut parts = Vec::with_capacity(outs.len());
        for (y, t) in outs {
            parts.push(tape.slice_time(y, batch, t, t - common, common)?);
        }
        Ok((tape.concat_cols(&parts)?, common))
    }
}

/// Eager single-width convolution with global max pooling over one sequence
/// `x: [T, d]`. `weight` is `[width*d, filters]`.
pub fn conv1d_maxpool(x: &Tensor, weight: &Tensor, bias: &Tensor, width: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let time = x.rows();
    let mut xv = tape.leaf(x.clone());
    let mut t = time;
    if t < width {
        xv = tape.pad_time_front(xv, 1, t, width)?;
        t = width;
    }
    let w = tape.leaf(weight.clone());
    let b = tape.leaf(bias.clone());
    let windows = tape.unfold(xv, 1, t, width)?;
    let z = tape.matmul(windows, w)?;
    let z = tape.add_bias(z, b)?;
    let z = tape.activation(z, Activation::Relu)?;
    let out_t = t - width + 1;
    let p = tape.max_pool_time(z, 1, out_t, out_t, out_t)?;
    let out = tape.value(p).clone();
    let n = out.len();
    out.reshape(vec![n])
}

/// conv(2,3,4) → local max-pool (2, stride 2) → conv(2,3,4) → global max-pool.
#[derive(Debug, Clone)]
pub struct CnnEncoder {
    pub first: ConvBank,
    pub second: ConvBank,
}

impl CnnEncoder {
    pub fn new(params: &mut ParamSet, input_dim: usize, rng: &mut SeededRng) -> Self {
        let first = ConvBank::new(
            params,
            "cnn.conv1",
            input_dim,
            &CONV_WIDTHS,
            CONV_FILTERS,
            rng,
        );
        let second = ConvBank::new(
            params,
            "cnn.conv2",
            first.out_channels(),
            &CONV_WIDTHS,
            CONV_FILTERS,
            rng,
        );
        Self { first, second }
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_channels()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x: Var,
        batch: usize,
        time: usize,
    ) -> Result<Var> {
        let (h, t) = self.first.forward_aligned(tape, pv, x, batch, time)?;
        // inputs are left-padded, so pool windows are aligned to the end: an
        // odd length gets one zero step in front (relu output is never below it)
        let (h, t) = if t % 2 == 1 {
            (tape.pad_time_front(h, batch, t, t + 1)?, t + 1)
        } else {
            (h, t)
        };
        let pooled = tape.max_pool_time(h, batch, t, 2, 2)?;
        let pooled_t = t / 2;
        self.second
            .forward_global(tape, pv, pooled, batch, pooled_t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CellKind {
    Lstm,
    Gru,
}

/// One recurrent layer. LSTM gate columns are `[input | forget | candidate | output]`;
/// GRU columns are `[update | reset | candidate]`.
#[derive(Debug, Clone)]
pub struct RecurrentLayer {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    /// GRU only: hidden-to-candidate weights, applied after the reset gate.
    pub w_candidate: Option<ParamId>,
    pub bias: ParamId,
}

impl RecurrentLayer {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let gates = match kind {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        };
        let w_input = params.add_glorot(format!("{name}.w_input"), input_dim, gates * hidden, rng);
        let (w_hidden, w_candidate) = match kind {
            CellKind::Lstm => (
                params.add_glorot(format!("{name}.w_hidden"), hidden, 4 * hidden, rng),
                None,
            ),
            CellKind::Gru => (
                params.add_glorot(format!("{name}.w_hidden"), hidden, 2 * hidden, rng),
                Some(params.add_glorot(format!("{name}.w_candidate"), hidden, hidden, rng)),
            ),
        };
        let bias = params.add_zeros(format!("{name}.bias"), gates * hidden);
        Self {
            kind,
            input_dim,
            hidden,
            w_input,
            w_hidden,
            w_candidate,
            bias,
        }
    }

    /// Runs the recurrence from zero state over `steps` (each `[batch, input_dim]`)
    /// and returns the hidden state after every step.
    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        steps: &[Var],
        batch: usize,
    ) -> Result<Vec<Var>> {
        let hsz = self.hidden;
        let mut h = tape.leaf(Tensor::zeros(&[batch, hsz]));
        let mut c = tape.leaf(Tensor::zeros(&[batch, hsz]));
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            let xz = tape.matmul(x, pv[self.w_input.0])?;
            let xz = tape.add_bias(xz, pv[self.bias.0])?;
            match self.kind {
                CellKind::Lstm => {
                    let hz = tape.matmul(h, pv[self.w_hidden.0])?;
                    let z = tape.add(xz, hz)?;
                    let gate = |tape: &mut Tape, k: usize, act| -> Result<Var> {
                        let s = tape.slice_cols(z, k * hsz, hsz)?;
                        tape.activation(s, act)
                    };
                    let i = gate(tape, 0, Activation::Sigmoid)?;
                    let f = gate(tape, 1, Activation::Sigmoid)?;
                    let g = gate(tape, 2, Activation::Tanh)?;
                    let o = gate(tape, 3, Activation::Sigmoid)?;
                    let keep = tape.mul(f, c)?;
                    let write = tape.mul(i, g)?;
                    c = tape.add(keep, write)?;
                    let ct = tape.activation(c, Activation::Tanh)?;
                    h = tape.mul(o, ct)?;
                }
                CellKind::Gru => {
                    let hzr = tape.matmul(h, pv[self.w_hidden.0])?;
                    let xz_u = tape.slice_cols(xz, 0, hsz)?;
                    let xz_r = tape.slice_cols(xz, hsz, hsz)?;
                    let xz_c = tape.slice_cols(xz, 2 * hsz, hsz)?;
                    let hz_u = tape.slice_cols(hzr, 0, hsz)?;
                    let hz_r = tape.slice_cols(hzr, hsz, hsz)?;
                    let u = tape.add(xz_u, hz_u)?;
                    let update = tape.activation(u, Activation::Sigmoid)?;
                    let r = tape.add(xz_r, hz_r)?;
                    let reset = tape.activation(r, Activation::Sigmoid)?;
                    let rh = tape.mul(reset, h)?;
                    let w_cand = self.w_candidate.expect("gru has candidate weights");
                    let hc = tape.matmul(rh, pv[w_cand.0])?;
                    let cand = tape.add(xz_c, hc)?;
                    let cand = tape.activation(cand, Activation::Tanh)?;
                    // h' = (1 - z) h + z h~  =  h + z (h~ - h)
                    let delta = tape.sub(cand, h)?;
                    let step = tape.mul(update, delta)?;
                    h = tape.add(h, step)?;
                }
            }
            out.push(h);
        }
        Ok(out)
    }
}

/// Stacked recurrent layers; the last layer's final hidden state is the output.
#[derive(Debug, Clone)]
pub struct RecurrentEncoder {
    pub layers: Vec<RecurrentLayer>,
}

impl RecurrentEncoder {
    pub fn new(
        params: &mut ParamSet,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let prefix = match kind {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        };
        let layers = (0..depth)
            .map(|l| {
                let inp = if l == 0 { input_dim } else { hidden };
                RecurrentLayer::new(params, &format!("{prefix}.{l}"), kind, inp, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    /// `x: [batch*time, input_dim]` → `[batch, hidden]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x: Var,
        batch: usize,
        time: usize,
    ) -> Result<Var> {
        let mut steps = Vec::with_capacity(time);
        for t in 0..time {
            steps.push(tape.slice_time(x, batch, time, t, 1)?);
        }
        for layer in &self.layers {
            steps = layer.forward(tape, pv, &steps, batch)?;
        }
        Ok(*steps.last().expect("time >= 1"))
    }

    /// Eager run over one sequence `[T, d]`.
    pub fn run(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = params.leaves(&mut tape);
        let xv = tape.leaf(x.clone());
        let h = self.forward(&mut tape, &pv, xv, 1, x.rows())?;
        let out = tape.value(h).clone();
        let n = out.len();
        out.reshape(vec![n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check_at;

    fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor {
        let mut rng = SeededRng::new(seed);
        let n = shape.iter().product();
        Tensor::new(
            (0..n).map(|_| rng.uniform(-scale, scale)).collect(),
            shape.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn dense_identity_relu() {
        let x = Tensor::vector(vec![0.5, 2.0, 3.0]);
        let y = dense(
            &x,
            &Tensor::identity(3),
            &Tensor::zeros(&[3]),
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dense_zero_weights_give_activation_of_bias() {
        let x = Tensor::vector(vec![0.5, -2.0]);
        let b = Tensor::vector(vec![0.0, 1.0, -1.0]);
        let y = dense(&x, &Tensor::zeros(&[2, 3]), &b, Activation::Sigmoid).unwrap();
        assert!((y.data()[0] - 0.5).abs() < 1e-15);
        assert!((y.data()[1] - crate::autodiff::sigmoid(1.0)).abs() < 1e-15);
    }

    #[test]
    fn dense_shape_mismatch() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert!(dense(
            &x,
            &Tensor::zeros(&[3, 3]),
            &Tensor::zeros(&[3]),
            Activation::Relu
        )
        .is_err());
    }

    #[test]
    fn conv_ones_filter() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0], vec![3, 1]).unwrap();
        let w = Tensor::ones(&[2, 1]);
        let b = Tensor::zeros(&[1]);
        let y = conv1d_maxpool(&x, &w, &b, 2).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_zero_filter() {
        let x = random(&[6, 3], 1, 1.0);
        let y = conv1d_maxpool(&x, &Tensor::zeros(&[9, 4]), &Tensor::zeros(&[4]), 3).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_short_sequence_is_padded() {
        let x = Tensor::new(vec![2.0], vec![1, 1]).unwrap();
        let y = conv1d_maxpool(&x, &Tensor::ones(&[3, 1]), &Tensor::zeros(&[1]), 3).unwrap();
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn lstm_zero_weights_stay_zero() {
        let mut params = ParamSet::new();
        let enc =
            RecurrentEncoder::new(&mut params, CellKind::Lstm, 3, 4, 2, &mut SeededRng::new(0));
        let zeroed = zero_params(&params);
        let out = enc.run(&zeroed, &random(&[5, 3], 2, 1.0)).unwrap();
        assert_eq!(out.shape(), &[4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_zero_weights_stay_zero() {
        let mut params = ParamSet::new();
        let enc =
            RecurrentEncoder::new(&mut params, CellKind::Gru, 3, 4, 2, &mut SeededRng::new(0));
        let zeroed = zero_params(&params);
        let out = enc.run(&zeroed, &random(&[5, 3], 2, 1.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_single_step_matches_cell_formula() {
        let mut params = ParamSet::new();
        let mut rng = SeededRng::new(3);
        let enc = RecurrentEncoder::new(&mut params, CellKind::Lstm, 2, 3, 1, &mut rng);
        let x = random(&[1, 2], 4, 1.0);
        let out = enc.run(&params, &x).unwrap();

        // h0 = c0 = 0, so only the input projection matters
        let layer = &enc.layers[0];
        let wx = params.get(layer.w_input);
        let hsz = 3;
        let z: Vec<f64> = (0..4 * hsz)
            .map(|j| (0..2).map(|k| x.data()[k] * wx.at(k, j)).sum())
            .collect();
        let sig = crate::autodiff::sigmoid;
        for u in 0..hsz {
            let i = sig(z[u]);
            let g = z[2 * hsz + u].tanh();
            let o = sig(z[3 * hsz + u]);
            let c = i * g;
            let h = o * c.tanh();
            assert!((out.data()[u] - h).abs() < 1e-14);
        }
    }

    #[test]
    fn gru_contractive_weights_converge() {
        let mut params = ParamSet::new();
        let enc =
            RecurrentEncoder::new(&mut params, CellKind::Gru, 3, 8, 1, &mut SeededRng::new(9));
        let mut scaled = ParamSet::new();
        for (name, t) in params.iter() {
            scaled.add(name, t.map(|v| v * 0.1));
        }
        let step = random(&[1, 3], 10, 1.0);
        let mut prev_gap = f64::INFINITY;
        let mut last = Vec::new();
        let mut outputs = Vec::new();
        for len in 1..=50 {
            let rows: Vec<Vec<f64>> = (0..len).map(|_| step.data().to_vec()).collect();
            let x = Tensor::from_rows(&rows).unwrap();
            outputs.push(enc.run(&scaled, &x).unwrap().into_data());
        }
        for pair in outputs.windows(2).skip(1) {
            let gap: f64 = pair[1]
                .iter()
                .zip(&pair[0])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(gap <= prev_gap + 1e-15, "gap grew: {gap} > {prev_gap}");
            prev_gap = gap;
            last = pair[1].clone();
        }
        assert!(prev_gap < 1e-6, "did not converge: {prev_gap}");
        assert!(last.iter().all(|v| v.is_finite()));
    }

    fn zero_params(params: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, t) in params.iter() {
            out.add(name, t.map(|_| 0.0));
        }
        out
    }

    /// Checks every parameter (a sample of coordinates for large ones) and the
    /// input of a layer closure.
    fn check_all(
        params: &ParamSet,
        input: &Tensor,
        f: impl Fn(&mut Tape, &[Var], Var) -> Result<Var>,
    ) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..params.len() {
            let p = params.get(ParamId(k));
            let coords: Vec<usize> = (0..p.len()).step_by((p.len() / 40).max(1)).collect();
            let err = gradient_check_at(
                |tape, v| {
                    let mut pv = params.leaves(tape);
                    pv[k] = v;
                    let x = tape.leaf(input.clone());
                    f(tape, &pv, x)
                },
                p,
                &coords,
            )
            .unwrap();
            worst = worst.max(err);
        }
        let err = gradient_check_at(
            |tape, v| {
                let pv = params.leaves(tape);
                f(tape, &pv, v)
            },
            input,
            &(0..input.len()).collect::<Vec<_>>(),
        )
        .unwrap();
        worst.max(err)
    }

    #[test]
    fn gradcheck_recurrent_cells() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let mut params = ParamSet::new();
            let enc = RecurrentEncoder::new(&mut params, kind, 3, 4, 2, &mut SeededRng::new(42));
            let x = random(&[2 * 5, 3], 43, 1.0);
            let err = check_all(&params, &x, |tape, pv, x| enc.forward(tape, pv, x, 2, 5));
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }

    #[test]
    fn gradcheck_dense_relu() {
        let mut params = ParamSet::new();
        let layer = Dense::new(
            &mut params,
            "d",
            8,
            4,
            Activation::Relu,
            &mut SeededRng::new(42),
        );
        params
            .get_mut(layer.bias)
            .data_mut()
            .copy_from_slice(&[0.1, -0.2, 0.3, 0.05]);
        let x = random(&[3, 8], 44, 1.0);
        let err = check_all(&params, &x, |tape, pv, x| layer.forward(tape, pv, x));
        assert!(err < 1e-4, "{err}");
    }
}

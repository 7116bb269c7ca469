//! Layers with hand-written forward and backward passes.
//!
//! Each layer caches what its backward pass needs during `forward`, and
//! `backward` overwrites the parameter gradients (no accumulation across
//! calls). Reductions over the batch run in a fixed order, so results do
//! not depend on the execution strategy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{NnError, Tensor3};
use crate::exec::Execution;

/// Forward-pass mode. Training draws dropout masks from the given RNG and
/// uses batch statistics in batch normalisation.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Infer,
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// A trainable array with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

fn shape_err(msg: String) -> NnError {
    NnError::ShapeMismatch(msg)
}

/// Valid (unpadded) strided 1D cross-correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    /// `[filter][tap][in_channel]`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor3>,
}

impl Conv1d {
    pub fn new(filters: usize, kernel: usize, stride: usize, in_channels: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weight.len(), filters * kernel * in_channels);
        assert_eq!(bias.len(), filters);
        assert!(stride >= 1 && kernel >= 1);
        Self {
            filters,
            kernel,
            stride,
            in_channels,
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        }
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        (len >= self.kernel).then(|| (len - self.kernel) / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Tensor3, exec: Execution) -> Result<Tensor3, NnError> {
        let y = self.infer(x, exec)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor3, exec: Execution) -> Result<Tensor3, NnError> {
        if x.channels != self.in_channels {
            return Err(shape_err(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let out_len = self
            .out_len(x.len)
            .ok_or_else(|| shape_err(format!("conv kernel {} longer than input {}", self.kernel, x.len)))?;
        let mut y = Tensor3::zeros(x.batch, out_len, self.filters);
        let window = self.kernel * self.in_channels;
        let (w, bias, f, stride, cin) = (&self.weight.value, &self.bias.value, self.filters, self.stride, self.in_channels);
        exec.for_each_chunk(&mut y.data, out_len * f, |b, out| {
            let xs = x.sample(b);
            for t in 0..out_len {
                let patch = &xs[t * stride * cin..t * stride * cin + window];
                for o in 0..f {
                    let wo = &w[o * window..(o + 1) * window];
                    let mut acc = bias[o];
                    for (p, q) in patch.iter().zip(wo) {
                        acc += p * q;
                    }
                    out[t * f + o] = acc;
                }
            }
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor3, exec: Execution) -> Tensor3 {
        let x = self.input.as_ref().expect("forward before backward");
        let (f, stride, cin) = (self.filters, self.stride, self.in_channels);
        let window = self.kernel * cin;
        let out_len = dy.len;

        let mut dw = vec![0.0; self.weight.len()];
        exec.for_each_chunk(&mut dw, window, |o, dwo| {
            for b in 0..x.batch {
                let xs = x.sample(b);
                let dys = dy.sample(b);
                for t in 0..out_len {
                    let g = dys[t * f + o];
                    let patch = &xs[t * stride * cin..t * stride * cin + window];
                    for (acc, p) in dwo.iter_mut().zip(patch) {
                        *acc += g * p;
                    }
                }
            }
        });
        let mut db = vec![0.0; f];
        for b in 0..dy.batch {
            let dys = dy.sample(b);
            for t in 0..out_len {
                for (o, acc) in db.iter_mut().enumerate() {
                    *acc += dys[t * f + o];
                }
            }
        }

        let mut dx = Tensor3::zeros(x.batch, x.len, cin);
        let w = &self.weight.value;
        exec.for_each_chunk(&mut dx.data, x.len * cin, |b, dxs| {
            let dys = dy.sample(b);
            for t in 0..out_len {
                let base = t * stride * cin;
                for o in 0..f {
                    let g = dys[t * f + o];
                    let wo = &w[o * window..(o + 1) * window];
                    for (acc, q) in dxs[base..base + window].iter_mut().zip(wo) {
                        *acc += g * q;
                    }
                }
            }
        });
        self.weight.grad = dw;
        self.bias.grad = db;
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor3) -> Tensor3 {
        self.mask = x.data.iter().map(|&v| v > 0.0).collect();
        Self::infer(x)
    }

    pub fn infer(x: &Tensor3) -> Tensor3 {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    pub fn backward(&self, dy: &Tensor3) -> Tensor3 {
        let mut dx = dy.clone();
        for (g, &keep) in dx.data.iter_mut().zip(&self.mask) {
            if !keep {
                *g = 0.0;
            }
        }
        dx
    }
}

/// Per-channel normalisation over batch and length.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: (usize, usize),
}

impl BatchNorm1d {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            channels,
            eps,
            momentum,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            x_hat: Vec::new(),
            inv_std: Vec::new(),
            shape: (0, 0),
        }
    }

    fn check(&self, x: &Tensor3) -> Result<(), NnError> {
        if x.channels != self.channels {
            return Err(shape_err(format!(
                "batch norm expects {} channels, got {}",
                self.channels, x.channels
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor3, exec: Execution) -> Result<Tensor3, NnError> {
        self.check(x)?;
        if x.batch < 2 {
            return Err(NnError::DegenerateBatch(x.batch));
        }
        let c = self.channels;
        let count = (x.batch * x.len) as f64;
        let stats: Vec<(f64, f64)> = exec.map_range(c, |ch| {
            let mut sum = 0.0;
            for i in (ch..x.data.len()).step_by(c) {
                sum += x.data[i];
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for i in (ch..x.data.len()).step_by(c) {
                let d = x.data[i] - mean;
                sq += d * d;
            }
            (mean, sq / count)
        });
        self.inv_std = stats.iter().map(|&(_, var)| 1.0 / (var + self.eps).sqrt()).collect();
        let mut y = x.clone();
        self.x_hat = vec![0.0; x.data.len()];
        for (i, v) in y.data.iter_mut().enumerate() {
            let ch = i % c;
            let xh = (*v - stats[ch].0) * self.inv_std[ch];
            self.x_hat[i] = xh;
            *v = self.gamma.value[ch] * xh + self.beta.value[ch];
        }
        for (ch, &(mean, var)) in stats.iter().enumerate() {
            self.running_mean[ch] = self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * mean;
            self.running_var[ch] = self.momentum * self.running_var[ch] + (1.0 - self.momentum) * var;
        }
        self.shape = (x.batch, x.len);
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        self.check(x)?;
        let c = self.channels;
        let scale: Vec<f64> = (0..c)
            .map(|ch| self.gamma.value[ch] / (self.running_var[ch] + self.eps).sqrt())
            .collect();
        let mut y = x.clone();
        for (i, v) in y.data.iter_mut().enumerate() {
            let ch = i % c;
            *v = (*v - self.running_mean[ch]) * scale[ch] + self.beta.value[ch];
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor3, exec: Execution) -> Tensor3 {
        let c = self.channels;
        let count = (self.shape.0 * self.shape.1) as f64;
        let x_hat = &self.x_hat;
        let gamma = &self.gamma.value;
        // per channel: sum(dy), sum(dy * x_hat)
        let sums: Vec<(f64, f64)> = exec.map_range(c, |ch| {
            let (mut s, mut sx) = (0.0, 0.0);
            for i in (ch..dy.data.len()).step_by(c) {
                s += dy.data[i];
                sx += dy.data[i] * x_hat[i];
            }
            (s, sx)
        });
        let mut dx = dy.clone();
        for (i, g) in dx.data.iter_mut().enumerate() {
            let ch = i % c;
            let (s, sx) = sums[ch];
            // d x_hat = dy * gamma
            *g = gamma[ch] * self.inv_std[ch] / count * (count * *g - s - x_hat[i] * sx);
        }
        self.beta.grad = sums.iter().map(|s| s.0).collect();
        self.gamma.grad = sums.iter().map(|s| s.1).collect();
        dx
    }
}

/// Non-overlapping (by default) max pooling along the length axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool1d {
    pub size: usize,
    pub stride: usize,
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize),
}

impl MaxPool1d {
    pub fn new(size: usize, stride: usize) -> Self {
        assert!(size >= 1 && stride >= 1);
        Self {
            size,
            stride,
            argmax: Vec::new(),
            in_shape: (0, 0, 0),
        }
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        (len >= self.size).then(|| (len - self.size) / self.stride + 1)
    }

    fn run(&self, x: &Tensor3) -> Result<(Tensor3, Vec<usize>), NnError> {
        let out_len = self
            .out_len(x.len)
            .ok_or_else(|| shape_err(format!("pool size {} longer than input {}", self.size, x.len)))?;
        let mut y = Tensor3::zeros(x.batch, out_len, x.channels);
        let mut arg = vec![0; y.data.len()];
        for b in 0..x.batch {
            for t in 0..out_len {
                for c in 0..x.channels {
                    let mut best = x.idx(b, t * self.stride, c);
                    for k in 1..self.size {
                        let i = x.idx(b, t * self.stride + k, c);
                        if x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                    let o = y.idx(b, t, c);
                    y.data[o] = x.data[best];
                    arg[o] = best;
                }
            }
        }
        Ok((y, arg))
    }

    pub fn forward(&mut self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let (y, arg) = self.run(x)?;
        self.argmax = arg;
        self.in_shape = x.shape();
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        Ok(self.run(x)?.0)
    }

    pub fn backward(&self, dy: &Tensor3) -> Tensor3 {
        let (b, l, c) = self.in_shape;
        let mut dx = Tensor3::zeros(b, l, c);
        for (g, &i) in dy.data.iter().zip(&self.argmax) {
            dx.data[i] += g;
        }
        dx
    }
}

/// Maximum over the whole length axis: `(b, L, C) -> (b, 1, C)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalMaxPool {
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize),
}

impl GlobalMaxPool {
    fn run(x: &Tensor3) -> Result<(Tensor3, Vec<usize>), NnError> {
        if x.len == 0 {
            return Err(shape_err("global pooling over an empty axis".into()));
        }
        let mut y = Tensor3::zeros(x.batch, 1, x.channels);
        let mut arg = vec![0; y.data.len()];
        for b in 0..x.batch {
            for c in 0..x.channels {
                let mut best = x.idx(b, 0, c);
                for t in 1..x.len {
                    let i = x.idx(b, t, c);
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                y.data[b * x.channels + c] = x.data[best];
                arg[b * x.channels + c] = best;
            }
        }
        Ok((y, arg))
    }

    pub fn forward(&mut self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let (y, arg) = Self::run(x)?;
        self.argmax = arg;
        self.in_shape = x.shape();
        Ok(y)
    }

    pub fn infer(x: &Tensor3) -> Result<Tensor3, NnError> {
        Ok(Self::run(x)?.0)
    }

    pub fn backward(&self, dy: &Tensor3) -> Tensor3 {
        let (b, l, c) = self.in_shape;
        let mut dx = Tensor3::zeros(b, l, c);
        for (g, &i) in dy.data.iter().zip(&self.argmax) {
            dx.data[i] += g;
        }
        dx
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` while training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    mask: Vec<f64>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::BadRate(rate));
        }
        Ok(Self { rate, mask: Vec::new() })
    }

    pub fn forward(&mut self, x: &Tensor3, mode: &mut Mode<'_>) -> Tensor3 {
        match mode {
            Mode::Train(rng) if self.rate > 0.0 => {
                let scale = 1.0 / (1.0 - self.rate);
                self.mask = (0..x.data.len())
                    .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { scale })
                    .collect();
                let mut y = x.clone();
                y.data.iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
                y
            }
            _ => {
                self.mask = vec![1.0; x.data.len()];
                x.clone()
            }
        }
    }

    pub fn backward(&self, dy: &Tensor3) -> Tensor3 {
        let mut dx = dy.clone();
        dx.data.iter_mut().zip(&self.mask).for_each(|(g, m)| *g *= m);
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Fully connected layer on flattened samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub units: usize,
    pub activation: Activation,
    /// `[unit][input]`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor3>,
    active: Vec<bool>,
}

impl Dense {
    pub fn new(inputs: usize, units: usize, activation: Activation, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(weight.len(), inputs * units);
        assert_eq!(bias.len(), units);
        Self {
            inputs,
            units,
            activation,
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
            active: Vec::new(),
        }
    }

    fn affine(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        if x.sample_len() != self.inputs {
            return Err(shape_err(format!(
                "dense expects {} inputs, got {}",
                self.inputs,
                x.sample_len()
            )));
        }
        let mut y = Tensor3::zeros(x.batch, 1, self.units);
        for b in 0..x.batch {
            let xs = x.sample(b);
            for u in 0..self.units {
                let wu = &self.weight.value[u * self.inputs..(u + 1) * self.inputs];
                let mut acc = self.bias.value[u];
                for (p, q) in xs.iter().zip(wu) {
                    acc += p * q;
                }
                y.data[b * self.units + u] = acc;
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let mut y = self.affine(x)?;
        self.input = Some(x.clone());
        self.active = match self.activation {
            Activation::Relu => y.data.iter().map(|&v| v > 0.0).collect(),
            Activation::None => vec![true; y.data.len()],
        };
        y.data.iter_mut().zip(&self.active).for_each(|(v, &a)| {
            if !a {
                *v = 0.0
            }
        });
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        let mut y = self.affine(x)?;
        if self.activation == Activation::Relu {
            y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor3) -> Tensor3 {
        let x = self.input.as_ref().expect("forward before backward");
        let mut dz = dy.data.clone();
        dz.iter_mut().zip(&self.active).for_each(|(g, &a)| {
            if !a {
                *g = 0.0
            }
        });
        let (n_in, n_out) = (self.inputs, self.units);
        let mut dw = vec![0.0; n_in * n_out];
        let mut db = vec![0.0; n_out];
        let mut dx = Tensor3::zeros(x.batch, x.len, x.channels);
        for b in 0..x.batch {
            let xs = x.sample(b);
            for u in 0..n_out {
                let g = dz[b * n_out + u];
                db[u] += g;
                let row = &mut dw[u * n_in..(u + 1) * n_in];
                for (acc, p) in row.iter_mut().zip(xs) {
                    *acc += g * p;
                }
                let wu = &self.weight.value[u * n_in..(u + 1) * n_in];
                for (acc, q) in dx.data[b * n_in..(b + 1) * n_in].iter_mut().zip(wu) {
                    *acc += g * q;
                }
            }
        }
        self.weight.grad = dw;
        self.bias.grad = db;
        dx
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor3, labels: &[usize]) -> Result<(f64, Tensor3), NnError> {
    let k = logits.sample_len();
    if labels.len() != logits.batch || labels.iter().any(|&l| l >= k) {
        return Err(shape_err(format!(
            "{} labels for a batch of {} with {} classes",
            labels.len(),
            logits.batch,
            k
        )));
    }
    let n = logits.batch as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let z = logits.sample(b);
        let probs = softmax(z);
        // log-sum-exp form stays finite for confident logits
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[label];
        for (j, p) in probs.iter().enumerate() {
            grad.data[b * k + j] = (p - if j == label { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Max-shifted softmax of one row.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

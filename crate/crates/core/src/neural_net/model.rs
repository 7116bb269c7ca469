use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Activation, BatchNorm1d, Conv1d, Dense, Dropout, GlobalMaxPool, MaxPool1d, Mode, Param, Relu};
use super::{NnError, Tensor3};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    Relu(Relu),
    BatchNorm(BatchNorm1d),
    MaxPool(MaxPool1d),
    Dropout(Dropout),
    GlobalMaxPool(GlobalMaxPool),
    Dense(Dense),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Relu(_) => "relu",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::MaxPool(_) => "maxpool",
            Layer::Dropout(_) => "dropout",
            Layer::GlobalMaxPool(_) => "global_maxpool",
            Layer::Dense(_) => "dense",
        }
    }

    /// `(len, channels)` produced from an input of `(len, channels)`.
    pub fn output_shape(&self, len: usize, channels: usize) -> Option<(usize, usize)> {
        match self {
            Layer::Conv1d(c) => (channels == c.in_channels).then(|| c.out_len(len).map(|l| (l, c.filters)))?,
            Layer::Relu(_) | Layer::Dropout(_) => Some((len, channels)),
            Layer::BatchNorm(b) => (channels == b.channels).then_some((len, channels)),
            Layer::MaxPool(p) => p.out_len(len).map(|l| (l, channels)),
            Layer::GlobalMaxPool(_) => (len > 0).then_some((1, channels)),
            Layer::Dense(d) => (len * channels == d.inputs).then_some((1, d.units)),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }
}

/// Hyper-parameters of the LeNet-5 style classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchConfig {
    pub input_len: usize,
    pub input_channels: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_len: 900,
            input_channels: 3,
            dropout: 0.5,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
        }
    }
}

/// Ordered layer stack with its input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub input_len: usize,
    pub input_channels: usize,
    pub layers: Vec<Layer>,
    pub exec: Execution,
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

fn glorot(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    (0..n).map(|_| rng.random_range(-limit..limit) as f64).collect()
}

impl Model {
    /// Conv(64,5,/2) ReLU BN Pool(3) Drop | Conv(96,5,/2) ReLU BN Pool(3) Drop |
    /// Conv(128,5,/2) ReLU BN GlobalMax Drop | FC128 Drop | FC64 Drop | FC2.
    pub fn lenet5(arch: &ArchConfig, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut cin = arch.input_channels;
        let kernel = 5;
        for (i, &filters) in [64usize, 96, 128].iter().enumerate() {
            let w = glorot(&mut rng, filters * kernel * cin, kernel * cin, kernel * filters);
            layers.push(Layer::Conv1d(Conv1d::new(filters, kernel, 2, cin, w, vec![0.0; filters])));
            layers.push(Layer::Relu(Relu::default()));
            layers.push(Layer::BatchNorm(BatchNorm1d::new(filters, arch.bn_eps, arch.bn_momentum)));
            if i < 2 {
                layers.push(Layer::MaxPool(MaxPool1d::new(3, 3)));
            } else {
                layers.push(Layer::GlobalMaxPool(GlobalMaxPool::default()));
            }
            layers.push(Layer::Dropout(Dropout::new(arch.dropout)?));
            cin = filters;
        }
        let mut inputs = cin;
        for (units, act) in [(128, Activation::Relu), (64, Activation::Relu), (2, Activation::None)] {
            let w = glorot(&mut rng, units * inputs, inputs, units);
            layers.push(Layer::Dense(Dense::new(inputs, units, act, w, vec![0.0; units])));
            if act == Activation::Relu {
                layers.push(Layer::Dropout(Dropout::new(arch.dropout)?));
            }
            inputs = units;
        }
        let model = Model {
            input_len: arch.input_len,
            input_channels: arch.input_channels,
            layers,
            exec: Execution::default(),
        };
        model.shape_chain()?;
        Ok(model)
    }

    /// `(len, channels)` after every layer, checked against the input shape.
    pub fn shape_chain(&self) -> Result<Vec<(usize, usize)>, NnError> {
        let mut shape = (self.input_len, self.input_channels);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape.0, shape.1).ok_or_else(|| {
                NnError::ShapeMismatch(format!(
                    "layer {i} ({}) cannot take input ({}, {})",
                    layer.name(),
                    shape.0,
                    shape.1
                ))
            })?;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn num_classes(&self) -> usize {
        self.shape_chain()
            .ok()
            .and_then(|c| c.last().map(|s| s.0 * s.1))
            .unwrap_or(0)
    }

    fn check_input(&self, x: &Tensor3) -> Result<(), NnError> {
        if x.len != self.input_len || x.channels != self.input_channels {
            return Err(NnError::ShapeMismatch(format!(
                "model expects (·, {}, {}), got (·, {}, {})",
                self.input_len, self.input_channels, x.len, x.channels
            )));
        }
        Ok(())
    }

    /// Forward pass returning logits. In training mode each layer caches
    /// what its backward pass needs.
    pub fn forward(&mut self, x: &Tensor3, mode: &mut Mode<'_>) -> Result<Tensor3, NnError> {
        self.check_input(x)?;
        let exec = self.exec;
        let training = mode.is_training();
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = match layer {
                Layer::Conv1d(c) if training => c.forward(&h, exec)?,
                Layer::Conv1d(c) => c.infer(&h, exec)?,
                Layer::Relu(r) if training => r.forward(&h),
                Layer::Relu(_) => Relu::infer(&h),
                Layer::BatchNorm(b) if training => b.forward(&h, exec)?,
                Layer::BatchNorm(b) => b.infer(&h)?,
                Layer::MaxPool(p) if training => p.forward(&h)?,
                Layer::MaxPool(p) => p.infer(&h)?,
                Layer::Dropout(d) => d.forward(&h, mode),
                Layer::GlobalMaxPool(g) if training => g.forward(&h)?,
                Layer::GlobalMaxPool(_) => GlobalMaxPool::infer(&h)?,
                Layer::Dense(d) if training => d.forward(&h)?,
                Layer::Dense(d) => d.infer(&h)?,
            };
            if !h.is_finite() {
                return Err(NnError::NonFinite(format!("output of layer {i} ({})", layer.name())));
            }
        }
        Ok(h)
    }

    /// Inference-mode logits without touching any cached state.
    pub fn infer(&self, x: &Tensor3) -> Result<Tensor3, NnError> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Conv1d(c) => c.infer(&h, self.exec)?,
                Layer::Relu(_) => Relu::infer(&h),
                Layer::BatchNorm(b) => b.infer(&h)?,
                Layer::MaxPool(p) => p.infer(&h)?,
                Layer::Dropout(_) => h,
                Layer::GlobalMaxPool(_) => GlobalMaxPool::infer(&h)?,
                Layer::Dense(d) => d.infer(&h)?,
            };
            if !h.is_finite() {
                return Err(NnError::NonFinite(format!("output of layer {i} ({})", layer.name())));
            }
        }
        Ok(h)
    }

    /// Back-propagates `d_logits` through the cached training pass, leaving
    /// parameter gradients in each layer's `Param::grad`.
    pub fn backward(&mut self, d_logits: &Tensor3) -> Tensor3 {
        let exec = self.exec;
        let mut g = d_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Conv1d(c) => c.backward(&g, exec),
                Layer::Relu(r) => r.backward(&g),
                Layer::BatchNorm(b) => b.backward(&g, exec),
                Layer::MaxPool(p) => p.backward(&g),
                Layer::Dropout(d) => d.backward(&g),
                Layer::GlobalMaxPool(p) => p.backward(&g),
                Layer::Dense(d) => d.backward(&g),
            };
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        let mut m = self.clone();
        m.params_mut().iter().map(|p| p.len()).sum()
    }

    /// Rounds parameters and batch-norm running statistics to f32 precision,
    /// the precision of the model file.
    pub fn round_to_storage(&mut self) {
        for layer in &mut self.layers {
            if let Layer::BatchNorm(b) = layer {
                round_f32(&mut b.running_mean);
                round_f32(&mut b.running_var);
            }
        }
        for p in self.params_mut() {
            round_f32(&mut p.value);
        }
    }
}

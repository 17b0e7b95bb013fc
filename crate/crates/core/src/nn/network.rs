use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward_in_place, relu_in_place, Activation, BatchNorm, BatchNormCache, Conv2d, Linear};
use super::loss::{huber_grad, huber_loss};
use super::{NnError, Tensor};
use crate::Scalar;

/// Architecture of the Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_planes: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of each conv block; the length is the conv depth.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub hidden_units: usize,
    pub outputs: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// Named network depth profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetDepth {
    /// One conv block.
    Shallow,
    /// Three conv blocks.
    Deep,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::for_depth(NetDepth::Deep)
    }
}

impl NetConfig {
    pub fn for_depth(depth: NetDepth) -> Self {
        let conv_channels = match depth {
            NetDepth::Shallow => vec![16],
            NetDepth::Deep => vec![16, 32, 32],
        };
        Self {
            input_planes: 2,
            input_height: 25,
            input_width: 24,
            conv_channels,
            kernel: 5,
            stride: 2,
            padding: 2,
            hidden_units: 192,
            outputs: 3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Channels, height and width after the last conv block.
    pub fn conv_output(&self) -> (usize, usize, usize) {
        let dim = |d: usize| (d + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        let (mut h, mut w) = (self.input_height, self.input_width);
        for _ in &self.conv_channels {
            h = dim(h);
            w = dim(w);
        }
        (self.conv_channels.last().copied().unwrap_or(self.input_planes), h, w)
    }

    pub fn flat_features(&self) -> usize {
        let (c, h, w) = self.conv_output();
        c * h * w
    }

    pub fn input_len(&self) -> usize {
        self.input_planes * self.input_height * self.input_width
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |reason: String| Err(NnError::Config(reason));
        if self.input_planes == 0 || self.input_height == 0 || self.input_width == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.kernel == 0 || self.stride == 0 || self.hidden_units == 0 || self.outputs == 0 {
            return bad("kernel, stride, hidden units and outputs must be positive".into());
        }
        if self.conv_channels.contains(&0) {
            return bad("conv channel counts must be positive".into());
        }
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (i, _) in self.conv_channels.iter().enumerate() {
            if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
                return bad(format!("conv block {i} receives {h}x{w}, smaller than the {} kernel", self.kernel));
            }
            h = (h + 2 * self.padding - self.kernel) / self.stride + 1;
            w = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0 && self.bn_eps > 0.0) {
            return bad("batch-norm momentum must be in (0, 1] and eps positive".into());
        }
        Ok(())
    }
}

/// Whether batch norm uses batch statistics (training) or running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct ConvBlockCache<T> {
    input_dims: (usize, usize),
    col: Vec<T>,
    norm: BatchNormCache<T>,
    output: Activation<T>,
}

/// Intermediate values of one forward pass, consumed by [`QNetwork::backward`].
pub struct ForwardCache<T> {
    batch: usize,
    blocks: Vec<ConvBlockCache<T>>,
    flat: Vec<T>,
    hidden: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients laid out like [`QNetwork::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &QNetwork<T>) -> Self {
        Self { tensors: net.parameters().iter().map(|p| vec![T::zero(); p.len()]).collect() }
    }

    pub fn max_abs(&self) -> T {
        self.tensors.iter().flatten().fold(T::zero(), |m, &g| m.max(g.abs()))
    }
}

/// Conv blocks (conv, batch norm, ReLU), one ReLU hidden layer and a linear
/// head with one output per action.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    config: NetConfig,
    convs: Vec<Conv2d<T>>,
    norms: Vec<BatchNorm<T>>,
    hidden: Linear<T>,
    head: Linear<T>,
}

impl<T: Scalar> QNetwork<T> {
    pub fn new<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self, NnError> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut in_ch = config.input_planes;
        for &out_ch in &config.conv_channels {
            convs.push(Conv2d::new(in_ch, out_ch, config.kernel, config.stride, config.padding, rng));
            norms.push(BatchNorm::new(
                out_ch,
                T::from_f64_lossy(config.bn_momentum),
                T::from_f64_lossy(config.bn_eps),
            ));
            in_ch = out_ch;
        }
        let hidden = Linear::new(config.flat_features(), config.hidden_units, rng);
        let head = Linear::new(config.hidden_units, config.outputs, rng);
        Ok(Self { config, convs, norms, hidden, head })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Trainable tensors: per conv block weight, gamma, beta; then hidden
    /// weight, bias; then head weight, bias.
    pub fn parameters(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            out.push(&conv.weight);
            out.push(&norm.gamma);
            out.push(&norm.beta);
        }
        out.extend([&self.hidden.weight[..], &self.hidden.bias, &self.head.weight, &self.head.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for (conv, norm) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut conv.weight);
            out.push(&mut norm.gamma);
            out.push(&mut norm.beta);
        }
        out.push(&mut self.hidden.weight);
        out.push(&mut self.hidden.bias);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Batch-norm running means and variances, alternating per block.
    pub fn running_stats(&self) -> Vec<&[T]> {
        self.norms.iter().flat_map(|n| [&n.running_mean[..], &n.running_var[..]]).collect()
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut [T]> {
        self.norms.iter_mut().flat_map(|n| [&mut n.running_mean[..], &mut n.running_var[..]]).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Sets the head to zero so every Q-value is 0.
    pub fn zero_head(&mut self) {
        self.head.weight.fill(T::zero());
        self.head.bias.fill(T::zero());
    }

    fn check_input(&self, input: &Tensor<T>, mode: Mode) -> Result<usize, NnError> {
        let c = &self.config;
        let want = [c.input_planes, c.input_height, c.input_width];
        let shape = input.shape();
        if shape.len() != 4 || shape[1..] != want || shape[0] == 0 {
            return Err(NnError::ShapeMismatch {
                what: "network input",
                expected: format!("[n>=1, {}, {}, {}]", want[0], want[1], want[2]),
                got: format!("{shape:?}"),
            });
        }
        if mode == Mode::Train && shape[0] < 2 {
            return Err(NnError::BatchTooSmall(shape[0]));
        }
        Ok(shape[0])
    }

    /// Q-values `[n, outputs]` for a batch `[n, planes, height, width]`.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let batch = self.check_input(input, mode)?;
        let c = &self.config;
        let mut act = Activation::from_nchw(input.data(), batch, c.input_planes, c.input_height, c.input_width);
        let mut blocks = Vec::with_capacity(self.convs.len());
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            let input_dims = (act.height, act.width);
            let (pre, col) = conv.forward(&act);
            let (mut out, norm_cache) = norm.forward(&pre, mode == Mode::Train);
            relu_in_place(&mut out.data);
            act = out.clone();
            blocks.push(ConvBlockCache { input_dims, col, norm: norm_cache, output: out });
        }
        let flat = act.to_rows();
        let mut hidden = self.hidden.forward(&flat, batch);
        relu_in_place(&mut hidden);
        let q = self.head.forward(&hidden, batch);
        let out = Tensor::new(vec![batch, c.outputs], q)?;
        Ok((out, ForwardCache { batch, blocks, flat, hidden }))
    }

    /// Inference-mode forward; never touches running statistics.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.forward(input, Mode::Eval).map(|(q, _)| q)
    }

    /// Back-propagates `dL/dQ` (`[n, outputs]`, row-major) through a cached pass.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_q: &[T]) -> Gradients<T> {
        let batch = cache.batch;
        let mut grads = Gradients::zeros_like(self);
        let nt = grads.tensors.len();
        let (head_w, rest) = grads.tensors[nt - 2..].split_at_mut(1);
        let mut d_hidden = self.head.backward(&cache.hidden, grad_q, batch, &mut head_w[0], &mut rest[0]);
        relu_backward_in_place(&cache.hidden, &mut d_hidden);
        let (hid_w, rest) = grads.tensors[nt - 4..nt - 2].split_at_mut(1);
        let d_flat = self.hidden.backward(&cache.flat, &d_hidden, batch, &mut hid_w[0], &mut rest[0]);

        let (c, h, w) = self.config.conv_output();
        let mut d_act = Activation::from_rows(&d_flat, c, batch, h, w);
        for (i, block) in cache.blocks.iter().enumerate().rev() {
            relu_backward_in_place(&block.output.data, &mut d_act.data);
            let [dw, dgamma, dbeta] = &mut grads.tensors[3 * i..3 * i + 3] else { unreachable!() };
            let d_pre = self.norms[i].backward(&block.norm, &d_act, dgamma, dbeta);
            match self.convs[i].backward(block.input_dims, &block.col, &d_pre, dw, i > 0) {
                Some(dx) => d_act = dx,
                None => break,
            }
        }
        grads
    }

    /// Mean Huber loss of `Q(s, a_i) - y_i` and its gradients.
    pub fn huber_gradients(
        &self,
        input: &Tensor<T>,
        actions: &[usize],
        targets: &[T],
        mode: Mode,
    ) -> Result<(T, Gradients<T>, ForwardCache<T>), NnError> {
        let (q, cache) = self.forward(input, mode)?;
        let n = cache.batch;
        let outputs = self.config.outputs;
        if actions.len() != n || targets.len() != n {
            return Err(NnError::ShapeMismatch {
                what: "actions/targets",
                expected: format!("{n} entries each"),
                got: format!("{} actions, {} targets", actions.len(), targets.len()),
            });
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= outputs) {
            return Err(NnError::ShapeMismatch {
                what: "action index",
                expected: format!("< {outputs}"),
                got: bad.to_string(),
            });
        }
        let nf = T::from_usize(n).expect("batch size");
        let mut grad_q = vec![T::zero(); n * outputs];
        let mut loss = T::zero();
        for i in 0..n {
            let delta = q.row(i)[actions[i]] - targets[i];
            loss += huber_loss(delta);
            grad_q[i * outputs + actions[i]] = huber_grad(delta) / nf;
        }
        let grads = self.backward(&cache, &grad_q);
        Ok((loss / nf, grads, cache))
    }

    /// Folds the batch statistics of a training pass into the running estimates.
    pub fn commit_batch_stats(&mut self, cache: &ForwardCache<T>) {
        for (norm, block) in self.norms.iter_mut().zip(&cache.blocks) {
            let count = block.output.batch * block.output.height * block.output.width;
            norm.update_running(&block.norm, count);
        }
    }

    /// Copies every parameter and running statistic from `other`.
    pub fn sync_from(&mut self, other: &QNetwork<T>) {
        self.clone_from(other);
    }
}

//! Layer vocabulary: grouped 1-D convolution, normalization without affine
//! parameters, dense, and the stateless channel-wise functions.
//!
//! Grouped layers split the channel axis into contiguous equal blocks; block
//! `g` of the output depends only on block `g` of the input and on its own
//! parameter slice, which is what lets a single grouped model stand in for a
//! set of independent networks.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Hands parameters to a tape, as trainable leaves or as constants.
#[derive(Debug)]
pub struct ParamBinder {
    trainable: bool,
    vars: Vec<Var>,
}

impl ParamBinder {
    pub fn new(trainable: bool) -> Self {
        Self {
            trainable,
            vars: Vec::new(),
        }
    }

    pub fn bind<T: Element>(&mut self, tape: &mut Tape<T>, p: &Tensor<T>) -> Var {
        let v = if self.trainable {
            tape.param(p.clone())
        } else {
            tape.constant(p.clone())
        };
        self.vars.push(v);
        v
    }

    /// Bound parameters in declaration order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn into_vars(self) -> Vec<Var> {
        self.vars
    }
}

fn uniform_fill<T: Element>(buf: &mut [T], bound: f64, rng: &mut Rng) {
    for v in buf {
        *v = T::from_f64(rng.random_range(-bound..bound));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// `(out_channels, in_channels / groups, kernel_size)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Conv1d<T> {
    /// Zero-initialized; padding keeps the width for odd kernels.
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, groups: usize) -> Result<Self> {
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::invalid(format!(
                "conv {in_channels}->{out_channels} channels not divisible by groups={groups}"
            )));
        }
        if kernel_size == 0 {
            return Err(Error::invalid("kernel size must be positive"));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            padding: kernel_size / 2,
            groups,
            weight: Tensor::zeros(&[out_channels, in_channels / groups, kernel_size]),
            bias: Tensor::zeros(&[out_channels]),
        })
    }

    pub fn with_stride(mut self, stride: usize, padding: usize) -> Self {
        self.stride = stride;
        self.padding = padding;
        self
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// He-style uniform init with one independent stream per group.
    pub fn init(&mut self, group_rngs: &mut [Rng]) {
        assert_eq!(group_rngs.len(), self.groups, "one rng per group");
        let fan_in = (self.in_channels / self.groups) * self.kernel_size;
        let bound = (6.0 / fan_in as f64).sqrt();
        let per_group = self.weight.numel() / self.groups;
        for (chunk, rng) in self.weight.data_mut().chunks_exact_mut(per_group).zip(group_rngs) {
            uniform_fill(chunk, bound, rng);
        }
        self.bias.data_mut().iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, binder: &mut ParamBinder) -> Result<Var> {
        let c = tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: tape.shape(x).to_vec(),
                right: vec![self.out_channels, self.in_channels, self.kernel_size],
            });
        }
        let w = binder.bind(tape, &self.weight);
        let b = binder.bind(tape, &self.bias);
        tape.conv1d(x, w, Some(b), self.stride, self.padding, self.groups)
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Layer,
    Group,
    Batch,
}

/// Normalization without trainable scale or shift.
#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer<T> {
    pub kind: NormKind,
    /// Channel groups for [`NormKind::Group`]; 1 otherwise.
    pub groups: usize,
    pub eps: T,
    pub momentum: T,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Element> NormLayer<T> {
    pub fn new(kind: NormKind, channels: usize, groups: usize) -> Result<Self> {
        let groups = match kind {
            NormKind::Group => groups,
            _ => 1,
        };
        if groups == 0 || channels % groups != 0 {
            return Err(Error::invalid(format!(
                "group norm: {channels} channels not divisible by groups={groups}"
            )));
        }
        let (running_mean, running_var) = match kind {
            NormKind::Batch => (vec![T::zero(); channels], vec![T::one(); channels]),
            _ => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            kind,
            groups,
            eps: T::from_f64(NORM_EPS),
            momentum: T::from_f64(BATCH_NORM_MOMENTUM),
            running_mean,
            running_var,
        })
    }

    pub fn layer() -> Self {
        Self::new(NormKind::Layer, 1, 1).expect("layer norm")
    }

    pub fn group(groups: usize) -> Self {
        Self {
            kind: NormKind::Group,
            groups,
            eps: T::from_f64(NORM_EPS),
            momentum: T::from_f64(BATCH_NORM_MOMENTUM),
            running_mean: Vec::new(),
            running_var: Vec::new(),
        }
    }

    /// `training` selects batch statistics (and updates running averages) for
    /// batch normalization; layer and group kinds ignore it.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, training: bool) -> Result<Var> {
        match self.kind {
            NormKind::Layer => tape.group_norm(x, 1, self.eps),
            NormKind::Group => tape.group_norm(x, self.groups, self.eps),
            NormKind::Batch if training => {
                let (y, mean, var) = tape.batch_norm_train(x, self.eps)?;
                let m = self.momentum;
                for (r, v) in self.running_mean.iter_mut().zip(mean) {
                    *r = (T::one() - m) * *r + m * v;
                }
                for (r, v) in self.running_var.iter_mut().zip(var) {
                    *r = (T::one() - m) * *r + m * v;
                }
                Ok(y)
            }
            NormKind::Batch => tape.channel_normalize(x, &self.running_mean, &self.running_var, self.eps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out_features, in_features)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Dense<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: Tensor::zeros(&[out_features, in_features]),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    pub fn init(&mut self, rng: &mut Rng) {
        let bound = (6.0 / self.in_features as f64).sqrt();
        uniform_fill(self.weight.data_mut(), bound, rng);
        self.bias.data_mut().iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn forward(&self, tape: &mut Tape<T>, v: Var, binder: &mut ParamBinder) -> Result<Var> {
        let w = binder.bind(tape, &self.weight);
        let b = binder.bind(tape, &self.bias);
        tape.dense(v, w, Some(b))
    }

    /// The same map as a kernel-1 convolution over `(b, in_features, 1)`.
    pub fn as_conv1d(&self) -> Conv1d<T> {
        let mut conv = Conv1d::new(self.in_features, self.out_features, 1, 1).expect("groups=1");
        conv.weight = self
            .weight
            .reshape(&[self.out_features, self.in_features, 1])
            .expect("same numel");
        conv.bias = self.bias.clone();
        conv
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// `softmax(p / T)` per row, computed as `p * (1/T)` so that scaling by
/// `λ = 1/N` and temperature `T = N` evaluate the same expression.
pub fn softmax_temperature<T: Element>(p: &Tensor<T>, temperature: T) -> Result<Tensor<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::invalid("softmax temperature must be positive"));
    }
    let (b, k) = p.dims2("softmax_temperature")?;
    let mut out = vec![T::zero(); b * k];
    kernels::softmax_rows(p.data(), k, T::one() / temperature, &mut out);
    Tensor::new(vec![b, k], out)
}

pub fn argmax_rows<T: Element>(p: &Tensor<T>) -> Vec<usize> {
    let k = p.shape().last().copied().unwrap_or(1);
    p.data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

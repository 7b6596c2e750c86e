//! A single VGG-style network: encoder blocks, global average pooling, the
//! merge weight λ on the feature vector, and one dense head.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{Conv1d, Dense, NormKind, NormLayer, ParamBinder};
use crate::rng::{self, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Tensor};

use super::spec::{ArchitectureSpec, ConvType};

const HEAD_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv1d<T>),
    Norm(NormLayer<T>),
    Relu,
    MaxPool(usize),
}

/// Layer kinds reported by traced forwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerFamily {
    Conv,
    Norm,
    Activation,
    Pool,
    GlobalPool,
    Head,
}

impl LayerFamily {
    pub fn name(self) -> &'static str {
        match self {
            LayerFamily::Conv => "conv",
            LayerFamily::Norm => "norm",
            LayerFamily::Activation => "activation",
            LayerFamily::Pool => "pool",
            LayerFamily::GlobalPool => "global_pool",
            LayerFamily::Head => "head",
        }
    }
}

/// Shape-level description of one layer, for structural comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LayerDescriptor {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        groups: usize,
    },
    Norm {
        kind: NormKind,
        groups: usize,
    },
    Relu,
    MaxPool(usize),
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions<'a, T> {
    /// Batch-norm uses batch statistics and updates running averages.
    pub training: bool,
    /// Bind parameters as trainable leaves.
    pub trainable: bool,
    /// `(batch, feature_groups)` 0/1 mask applied to the pooled features.
    pub feature_mask: Option<&'a Tensor<T>>,
    /// Overrides the network's λ.
    pub lambda: Option<f64>,
    /// Record every layer output.
    pub trace: bool,
}

#[derive(Debug)]
pub struct NetworkForward {
    pub logits: Var,
    /// Pooled features before masking and λ.
    pub features: Var,
    /// Parameter leaves in declaration order.
    pub params: Vec<Var>,
    pub trace: Vec<(LayerFamily, Var)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub input_channels: usize,
    pub layers: Vec<Layer<T>>,
    pub feature_groups: usize,
    pub lambda: f64,
    pub head: Dense<T>,
}

impl<T: Element> Network<T> {
    /// Builds one member network (BL shape, λ = 1) initialized from the
    /// streams of ensemble `path`.
    pub fn member(spec: &ArchitectureSpec, seed: u64, path: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut in_ch = spec.input_channels;
        let mut conv_idx = 0u64;
        for (i, block) in spec.blocks.iter().enumerate() {
            let filters = spec.block_filters(i);
            for _ in 0..block.conv_layers_in_block {
                let mut conv = Conv1d::new(in_ch, filters, block.kernel_size, 1)?;
                conv.init(&mut [rng::stream(seed, &[rng::TAG_INIT, conv_idx, path as u64])]);
                layers.push(Layer::Conv(conv));
                layers.push(Layer::Norm(NormLayer::new(block.norm, filters, 1)?));
                layers.push(Layer::Relu);
                in_ch = filters;
                conv_idx += 1;
            }
            if let Some(p) = block.pool {
                layers.push(Layer::MaxPool(p));
            }
        }
        let mut head = Dense::new(in_ch, spec.num_classes);
        head.init(&mut head_stream(seed, path));
        Ok(Self {
            input_channels: spec.input_channels,
            layers,
            feature_groups: 1,
            lambda: 1.0,
            head,
        })
    }

    /// Builds the single grouped network of an EE spec (uniform, stepwise or
    /// ablated). Group `g` of every grouped layer draws from the same stream
    /// as member `g` would, so uniform EE equals its packed ME counterpart.
    pub fn grouped(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let groups = spec.block_groups();
        let input_channels = spec.model_input_channels();
        let mut layers = Vec::new();
        let mut in_ch = input_channels;
        let mut conv_idx = 0u64;
        for (i, block) in spec.blocks.iter().enumerate() {
            let g = groups[i];
            let width = spec.block_filters(i) * g;
            let conv_groups = match spec.conv_type() {
                ConvType::Group => g,
                ConvType::Conventional => 1,
            };
            let norm_kind = spec.effective_norm(i);
            for _ in 0..block.conv_layers_in_block {
                let mut conv = Conv1d::new(in_ch, width, block.kernel_size, conv_groups)?;
                let mut streams: Vec<Rng> = (0..conv_groups)
                    .map(|p| rng::stream(seed, &[rng::TAG_INIT, conv_idx, p as u64]))
                    .collect();
                conv.init(&mut streams);
                layers.push(Layer::Conv(conv));
                layers.push(Layer::Norm(NormLayer::new(norm_kind, width, g)?));
                layers.push(Layer::Relu);
                in_ch = width;
                conv_idx += 1;
            }
            if let Some(p) = block.pool {
                layers.push(Layer::MaxPool(p));
            }
        }
        let feature_groups = *groups.last().expect("validated");
        let per_group = in_ch / feature_groups;
        let member_heads: Vec<Dense<T>> = (0..feature_groups)
            .map(|p| {
                let mut h = Dense::new(per_group, spec.num_classes);
                h.init(&mut head_stream(seed, p));
                h
            })
            .collect();
        let head = pack_heads(&member_heads, spec.resolved_lambda());
        Ok(Self {
            input_channels,
            layers,
            feature_groups,
            lambda: spec.resolved_lambda(),
            head,
        })
    }

    pub fn feature_width(&self) -> usize {
        self.head.in_features
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, opts: &ForwardOptions<'_, T>) -> Result<NetworkForward> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.input_channels {
            return Err(Error::ShapeMismatch {
                op: "network input",
                left: shape,
                right: vec![0, self.input_channels, 0],
            });
        }
        let mut binder = ParamBinder::new(opts.trainable);
        let mut trace = Vec::new();
        let mut h = x;
        for layer in &mut self.layers {
            let (family, out) = match layer {
                Layer::Conv(c) => (LayerFamily::Conv, c.forward(tape, h, &mut binder)?),
                Layer::Norm(n) => (LayerFamily::Norm, n.forward(tape, h, opts.training)?),
                Layer::Relu => (LayerFamily::Activation, tape.relu(h)),
                Layer::MaxPool(p) => (LayerFamily::Pool, tape.max_pool(h, *p)?),
            };
            if opts.trace {
                trace.push((family, out));
            }
            h = out;
        }
        let features = tape.global_avg_pool(h)?;
        if opts.trace {
            trace.push((LayerFamily::GlobalPool, features));
        }
        let mut z = features;
        if let Some(mask) = opts.feature_mask {
            let expanded = expand_group_mask(mask, self.feature_width(), self.feature_groups)?;
            let m = tape.constant(expanded);
            z = tape.mul(z, m)?;
        }
        let lambda = opts.lambda.unwrap_or(self.lambda);
        if lambda != 1.0 {
            z = tape.scale(z, T::from_f64(lambda));
        }
        let logits = self.head.forward(tape, z, &mut binder)?;
        if opts.trace {
            trace.push((LayerFamily::Head, logits));
        }
        Ok(NetworkForward {
            logits,
            features,
            params: binder.into_vars(),
            trace,
        })
    }

    /// Parameters in declaration order: each convolution's weight and bias, then the head's.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Layer::Conv(c) = l {
                out.push(&c.weight);
                out.push(&c.bias);
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            if let Layer::Conv(c) = l {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv1d<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn norms(&self) -> impl Iterator<Item = &NormLayer<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Norm(n) => Some(n),
            _ => None,
        })
    }

    pub fn norms_mut(&mut self) -> impl Iterator<Item = &mut NormLayer<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Norm(n) => Some(n),
            _ => None,
        })
    }

    pub fn describe(&self) -> Vec<LayerDescriptor> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => LayerDescriptor::Conv {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel_size,
                    groups: c.groups,
                },
                Layer::Norm(n) => LayerDescriptor::Norm {
                    kind: n.kind,
                    groups: n.groups,
                },
                Layer::Relu => LayerDescriptor::Relu,
                Layer::MaxPool(p) => LayerDescriptor::MaxPool(*p),
            })
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    /// Batch-norm running statistics, flattened in layer order.
    pub fn buffers(&self) -> Vec<&[T]> {
        self.norms()
            .filter(|n| n.kind == NormKind::Batch)
            .flat_map(|n| [n.running_mean.as_slice(), n.running_var.as_slice()])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.norms_mut()
            .filter(|n| n.kind == NormKind::Batch)
            .flat_map(|n| [&mut n.running_mean, &mut n.running_var])
            .collect()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.norms().any(|n| n.kind == NormKind::Batch)
    }
}

fn head_stream(seed: u64, path: usize) -> Rng {
    rng::stream(seed, &[rng::TAG_INIT, HEAD_STREAM, path as u64])
}

/// Packs member heads `(k, m)` into one `(k, N·m)` head with bias `λ Σ b_p`.
pub(crate) fn pack_heads<T: Element>(heads: &[Dense<T>], lambda: f64) -> Dense<T> {
    let m = heads[0].in_features;
    let k = heads[0].out_features;
    let n = heads.len();
    let mut packed = Dense::new(m * n, k);
    let w = packed.weight.data_mut();
    for o in 0..k {
        for (p, h) in heads.iter().enumerate() {
            w[o * m * n + p * m..][..m].copy_from_slice(&h.weight.data()[o * m..][..m]);
        }
    }
    let lam = T::from_f64(lambda);
    for o in 0..k {
        let s: T = heads.iter().map(|h| h.bias.data()[o]).sum();
        packed.bias.data_mut()[o] = lam * s;
    }
    packed
}

/// Expands a `(b, groups)` mask to `(b, width)` with contiguous group blocks.
pub fn expand_group_mask<T: Element>(mask: &Tensor<T>, width: usize, groups: usize) -> Result<Tensor<T>> {
    let (b, g) = mask.dims2("feature mask")?;
    if g == 0 || groups % g != 0 || width % groups != 0 {
        return Err(Error::InvalidShape {
            op: "feature mask",
            detail: format!("mask with {g} columns cannot address {groups} feature groups of width {width}"),
        });
    }
    let per = width / g;
    let mut data = Vec::with_capacity(b * width);
    for i in 0..b {
        for j in 0..g {
            data.extend(std::iter::repeat_n(mask.data()[i * g + j], per));
        }
    }
    Tensor::new(vec![b, width], data)
}

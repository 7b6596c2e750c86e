//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value. Nodes whose
//! inputs all lack `requires_grad` are recorded as constants, so the backward
//! sweep only touches the differentiable part of the graph. Node indices are
//! handed out as [`Var`] handles and are always smaller than the index of any
//! node that consumes them, so a single reverse pass visits the graph in
//! topological order.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{cat_channels, Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
    },
    AddScalar(Var),
    MulScalar(Var, T),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    ChannelSlice {
        x: Var,
        start: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    SegmentNorm {
        x: Var,
        seg_len: usize,
        inv: Vec<T>,
    },
    BatchNormTrain {
        x: Var,
        inv: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        inv: Vec<T>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records differentiable operations and replays them backwards.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidShape {
        op,
        detail: detail.into(),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shape(v).to_vec(), g.clone()).ok()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0)?.take()
    }

    // ---- elementwise -------------------------------------------------

    /// `a op b` for identical shapes or where either side holds one element.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| apply(op, x, y)).collect();
            Tensor::new(av.shape().to_vec(), data)?
        } else if bv.numel() == 1 {
            let y = bv.item();
            Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| apply(op, x, y)).collect())?
        } else if av.numel() == 1 {
            let x = av.item();
            Tensor::new(bv.shape().to_vec(), bv.data().iter().map(|&y| apply(op, x, y)).collect())?
        } else {
            return Err(Error::ShapeMismatch {
                op: binary_name(op),
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        };
        Ok(self.push(out, &[a, b], Op::Binary { op, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().map(|&x| x + s).collect(),
        )
        .expect("same shape");
        self.push(out, &[a], Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = Tensor::new(
            self.shape(a).to_vec(),
            self.value(a).data().iter().map(|&x| x * s).collect(),
        )
        .expect("same shape");
        self.push(out, &[a], Op::MulScalar(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().copied().sum::<T>() / T::from_f64(v.numel() as f64);
        self.push(Tensor::scalar(s), &[a], Op::Mean(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect(),
        )
        .expect("same shape");
        self.push(out, &[a], Op::Relu(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, &[a], Op::Reshape(a)))
    }

    // ---- channel plumbing -------------------------------------------

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = cat_channels(&tensors)?;
        Ok(self.push(out, parts, Op::Concat(parts.to_vec())))
    }

    pub fn channel_slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).channel_slice(start, end)?;
        Ok(self.push(out, &[x], Op::ChannelSlice { x, start }))
    }

    // ---- layers -------------------------------------------------------

    /// Cross-correlation with zero padding. `w` is `(out, in / groups, kernel)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize, groups: usize) -> Result<Var> {
        let (batch, cin, width) = self.value(x).dims3("conv1d")?;
        let ws = self.shape(w).to_vec();
        let [cout, ipg, kernel] = ws[..] else {
            return Err(shape_err("conv1d", format!("weight must be 3-d, got {ws:?}")));
        };
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(shape_err(
                "conv1d",
                format!("channels {cin}->{cout} not divisible by groups={groups}"),
            ));
        }
        if ipg != cin / groups {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: self.shape(x).to_vec(),
                right: ws,
            });
        }
        if stride == 0 || width + 2 * padding < kernel {
            return Err(shape_err(
                "conv1d",
                format!("width {width} (+2x{padding} padding) shorter than kernel {kernel}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d bias",
                    left: vec![cout],
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let geom = ConvGeom {
            batch,
            in_channels: cin,
            out_channels: cout,
            width,
            kernel,
            stride,
            padding,
            groups,
        };
        let ow = geom.out_width();
        let mut out = vec![T::zero(); batch * cout * ow];
        kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let out = Tensor::new(vec![batch, cout, ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, &inputs, Op::Conv1d { x, w, b, geom }))
    }

    /// Normalizes each `(instance, channel group)` over its channels and width.
    /// `groups = 1` is layer normalization.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: T) -> Result<Var> {
        let (b, c, w) = self.value(x).dims3("group_norm")?;
        if groups == 0 || c % groups != 0 {
            return Err(shape_err("group_norm", format!("{c} channels not divisible by groups={groups}")));
        }
        let seg_len = (c / groups) * w;
        let mut out = vec![T::zero(); b * c * w];
        let inv = kernels::segment_norm_forward(self.value(x).data(), seg_len, eps, &mut out);
        let out = Tensor::new(vec![b, c, w], out)?;
        Ok(self.push(out, &[x], Op::SegmentNorm { x, seg_len, inv }))
    }

    /// Batch normalization with batch statistics; returns the output and the
    /// per-channel `(mean, variance)` used.
    pub fn batch_norm_train(&mut self, x: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (b, c, w) = self.value(x).dims3("batch_norm")?;
        if b < 2 {
            return Err(shape_err("batch_norm", "training mode needs batch >= 2"));
        }
        let (mean, var) = kernels::channel_stats(self.value(x).data(), b, c, w);
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = vec![T::zero(); b * c * w];
        kernels::channel_affine(self.value(x).data(), b, c, w, &mean, &inv, &mut out);
        let out = Tensor::new(vec![b, c, w], out)?;
        Ok((self.push(out, &[x], Op::BatchNormTrain { x, inv }), mean, var))
    }

    /// `(x - mean[c]) / sqrt(var[c] + eps)` with fixed statistics.
    pub fn channel_normalize(&mut self, x: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (b, c, w) = self.value(x).dims3("batch_norm")?;
        if mean.len() != c || var.len() != c {
            return Err(shape_err("batch_norm", format!("statistics for {} channels, input has {c}", mean.len())));
        }
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = vec![T::zero(); b * c * w];
        kernels::channel_affine(self.value(x).data(), b, c, w, mean, &inv, &mut out);
        let out = Tensor::new(vec![b, c, w], out)?;
        Ok(self.push(out, &[x], Op::ChannelAffine { x, inv }))
    }

    /// `x W^T + b` with `W` shaped `(out, in)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, n) = self.value(x).dims2("dense")?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[1] != n {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: self.shape(x).to_vec(),
                right: ws,
            });
        }
        let m = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::ShapeMismatch {
                    op: "dense bias",
                    left: vec![m],
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let mut out = vec![T::zero(); batch * m];
        kernels::dense_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            batch,
            n,
            m,
            &mut out,
        );
        let out = Tensor::new(vec![batch, m], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, &inputs, Op::Dense { x, w, b }))
    }

    pub fn max_pool(&mut self, x: Var, window: usize) -> Result<Var> {
        let (b, c, w) = self.value(x).dims3("max_pool")?;
        if window == 0 || w < window {
            return Err(shape_err("max_pool", format!("window {window} on width {w}")));
        }
        let ow = w / window;
        let mut out = vec![T::zero(); b * c * ow];
        let argmax = kernels::max_pool_forward(self.value(x).data(), b * c, w, window, &mut out);
        let out = Tensor::new(vec![b, c, ow], out)?;
        Ok(self.push(out, &[x], Op::MaxPool { x, argmax }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, w) = self.value(x).dims3("global_avg_pool")?;
        if w == 0 {
            return Err(shape_err("global_avg_pool", "zero width"));
        }
        let n = T::from_f64(w as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(w)
            .map(|r| r.iter().copied().sum::<T>() / n)
            .collect();
        let out = Tensor::new(vec![b, c], data)?;
        Ok(self.push(out, &[x], Op::GlobalAvgPool(x)))
    }

    /// Mean categorical cross-entropy of `(b, k)` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = self.value(logits).dims2("cross_entropy")?;
        if labels.len() != b {
            return Err(shape_err("cross_entropy", format!("{} labels for batch {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![T::zero(); b * k];
        kernels::softmax_rows(self.value(logits).data(), k, T::one(), &mut probs);
        let z = self.value(logits).data();
        let mut total = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            total += lse - row[l];
        }
        let loss = total / T::from_f64(b as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            &[logits],
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    // ---- backward -----------------------------------------------------

    /// Populates gradients of the scalar `loss` for every node that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        let out = &nodes[idx].value;

        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let n = nodes[v.0].value.numel();
                grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
            }};
        }

        match &nodes[idx].op {
            Op::Leaf => {}
            &Op::Binary { op, a, b } => {
                let (av, bv) = (val(a), val(b));
                let a_full = av.numel() == out.numel();
                let b_full = bv.numel() == out.numel();
                let at = |i: usize| if a_full { av.data()[i] } else { av.item() };
                let bt = |i: usize| if b_full { bv.data()[i] } else { bv.item() };
                if needs(a) {
                    let ga = acc!(a);
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match op {
                            BinaryOp::Add | BinaryOp::Sub => gi,
                            BinaryOp::Mul => gi * bt(i),
                            BinaryOp::Div => gi / bt(i),
                        };
                        ga[if a_full { i } else { 0 }] += d;
                    }
                }
                if needs(b) {
                    let gb = acc!(b);
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match op {
                            BinaryOp::Add => gi,
                            BinaryOp::Sub => -gi,
                            BinaryOp::Mul => gi * at(i),
                            BinaryOp::Div => -gi * at(i) / (bt(i) * bt(i)),
                        };
                        gb[if b_full { i } else { 0 }] += d;
                    }
                }
            }
            &Op::AddScalar(a) => {
                for (d, &gi) in acc!(a).iter_mut().zip(g) {
                    *d += gi;
                }
            }
            &Op::MulScalar(a, s) => {
                for (d, &gi) in acc!(a).iter_mut().zip(g) {
                    *d += gi * s;
                }
            }
            &Op::Sum(a) => {
                let g0 = g[0];
                acc!(a).iter_mut().for_each(|d| *d += g0);
            }
            &Op::Mean(a) => {
                let g0 = g[0] / T::from_f64(val(a).numel() as f64);
                acc!(a).iter_mut().for_each(|d| *d += g0);
            }
            &Op::Relu(a) => {
                let x = val(a).data();
                for ((d, &gi), &xi) in acc!(a).iter_mut().zip(g).zip(x) {
                    if xi > T::zero() {
                        *d += gi;
                    }
                }
            }
            &Op::Reshape(a) => {
                for (d, &gi) in acc!(a).iter_mut().zip(g) {
                    *d += gi;
                }
            }
            Op::Concat(parts) => {
                let (b, _, w) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                let total_c = out.shape()[1];
                let mut c0 = 0;
                for &p in parts {
                    let pc = val(p).shape()[1];
                    if needs(p) {
                        let gp = acc!(p);
                        for i in 0..b {
                            let src = &g[(i * total_c + c0) * w..][..pc * w];
                            for (d, &s) in gp[i * pc * w..][..pc * w].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    c0 += pc;
                }
            }
            &Op::ChannelSlice { x, start } => {
                let (b, c, w) = (val(x).shape()[0], val(x).shape()[1], val(x).shape()[2]);
                let oc = out.shape()[1];
                let gx = acc!(x);
                for i in 0..b {
                    let dst = &mut gx[(i * c + start) * w..][..oc * w];
                    for (d, &s) in dst.iter_mut().zip(&g[i * oc * w..][..oc * w]) {
                        *d += s;
                    }
                }
            }
            &Op::Conv1d { x, w, b, geom } => {
                let mut dx = needs(x).then(|| vec![T::zero(); val(x).numel()]);
                let mut dw = needs(w).then(|| vec![T::zero(); val(w).numel()]);
                let mut db = b.filter(|&b| needs(b)).map(|b| vec![T::zero(); val(b).numel()]);
                kernels::conv1d_backward(
                    &geom,
                    val(x).data(),
                    val(w).data(),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                add_into(grads, x, dx);
                add_into(grads, w, dw);
                if let Some(b) = b {
                    add_into(grads, b, db);
                }
            }
            Op::SegmentNorm { x, seg_len, inv } => {
                kernels::segment_norm_backward(out.data(), g, inv, *seg_len, acc!(*x));
            }
            Op::BatchNormTrain { x, inv } => {
                let (b, c, w) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                kernels::batch_norm_backward(out.data(), g, inv, b, c, w, acc!(*x));
            }
            Op::ChannelAffine { x, inv } => {
                let (c, w) = (out.shape()[1], out.shape()[2]);
                let gx = acc!(*x);
                for (i, (d, &gi)) in gx.iter_mut().zip(g).enumerate() {
                    *d += gi * inv[(i / w) % c];
                }
            }
            &Op::Dense { x, w, b } => {
                let (batch, n) = (val(x).shape()[0], val(x).shape()[1]);
                let m = out.shape()[1];
                let mut dx = needs(x).then(|| vec![T::zero(); val(x).numel()]);
                let mut dw = needs(w).then(|| vec![T::zero(); val(w).numel()]);
                let mut db = b.filter(|&b| needs(b)).map(|_| vec![T::zero(); m]);
                kernels::dense_backward(
                    val(x).data(),
                    val(w).data(),
                    g,
                    batch,
                    n,
                    m,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                add_into(grads, x, dx);
                add_into(grads, w, dw);
                if let Some(b) = b {
                    add_into(grads, b, db);
                }
            }
            Op::MaxPool { x, argmax } => {
                let gx = acc!(*x);
                for (&src, &gi) in argmax.iter().zip(g) {
                    gx[src] += gi;
                }
            }
            &Op::GlobalAvgPool(x) => {
                let w = val(x).shape()[2];
                let inv_w = T::one() / T::from_f64(w as f64);
                let gx = acc!(x);
                for (row, &gi) in gx.chunks_exact_mut(w).zip(g) {
                    row.iter_mut().for_each(|d| *d += gi * inv_w);
                }
            }
            Op::CrossEntropy { logits, probs, labels } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = g[0] / T::from_f64(b as f64);
                let gl = acc!(*logits);
                for (i, &l) in labels.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == l { T::one() } else { T::zero() };
                        gl[i * k + j] += scale * (probs[i * k + j] - onehot);
                    }
                }
            }
        }
    }
}

fn add_into<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, d: Option<Vec<T>>) {
    let Some(d) = d else { return };
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&d).for_each(|(e, &x)| *e += x),
        slot @ None => *slot = Some(d),
    }
}

#[inline]
fn apply<T: Element>(op: BinaryOp, x: T, y: T) -> T {
    match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => x / y,
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

/// Central-difference gradient of a scalar-valued `f` at `x`.
pub fn finite_difference_grad<T, F>(mut f: F, x: &Tensor<T>, eps: T) -> Result<Tensor<T>>
where
    T: Element,
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    if eps <= T::zero() {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if plus.numel() != 1 || minus.numel() != 1 {
            return Err(shape_err(
                "finite_difference_grad",
                format!("function must return a scalar, got shape {:?}", plus.shape()),
            ));
        }
        out.push((plus.item() - minus.item()) / (eps + eps));
    }
    Tensor::new(x.shape().to_vec(), out)
}

use log::warn;

use crate::error::{Error, Result};
use crate::layers::Conv1d;
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Tensor};

use super::network::{pack_heads, ForwardOptions, Layer, Network, NetworkForward};
use super::spec::{AblationCode, ArchitectureSpec, EnsembleMode};

/// BL, PE, ME or EE models behind one forward contract.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub spec: ArchitectureSpec,
    /// One network for BL/EE, N member networks for PE/ME.
    pub models: Vec<Network<T>>,
}

#[derive(Debug)]
pub struct BundleForward {
    /// Merged logits `(b, num_classes)`.
    pub logits: Var,
    /// Per-member logits (PE/ME) before merging.
    pub path_logits: Vec<Var>,
    /// Per-model forward records, parallel to `models`.
    pub models: Vec<NetworkForward>,
}

impl<T: Element> ModelBundle<T> {
    pub fn mode(&self) -> EnsembleMode {
        self.spec.ensemble_mode
    }

    /// Channels of the tensor `forward` expects.
    pub fn input_channels(&self) -> usize {
        self.spec.model_input_channels()
    }

    pub fn lambda(&self) -> f64 {
        self.spec.resolved_lambda()
    }

    pub fn param_count(&self) -> usize {
        self.models.iter().map(Network::param_count).sum()
    }

    /// Forward pass. PE/ME members read consecutive channel blocks of `x`
    /// (a repeated input gives every member the same window).
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, opts: &ForwardOptions<'_, T>) -> Result<BundleForward> {
        match self.spec.ensemble_mode {
            EnsembleMode::Baseline | EnsembleMode::Easy => {
                let f = self.models[0].forward(tape, x, opts)?;
                Ok(BundleForward {
                    logits: f.logits,
                    path_logits: Vec::new(),
                    models: vec![f],
                })
            }
            EnsembleMode::Pure | EnsembleMode::Merge => {
                let c = self.spec.input_channels;
                let n = self.models.len();
                let got = tape.shape(x).get(1).copied().unwrap_or(0);
                if got != c * n {
                    return Err(Error::ShapeMismatch {
                        op: "ensemble input",
                        left: tape.shape(x).to_vec(),
                        right: vec![0, c * n, 0],
                    });
                }
                let lambda = opts.lambda.unwrap_or(self.lambda());
                let member_opts = ForwardOptions {
                    lambda: Some(1.0),
                    feature_mask: None,
                    ..opts.clone()
                };
                let mut fwds = Vec::with_capacity(n);
                let mut paths = Vec::with_capacity(n);
                for (p, model) in self.models.iter_mut().enumerate() {
                    let xp = if n == 1 { x } else { tape.channel_slice(x, p * c, (p + 1) * c)? };
                    let f = model.forward(tape, xp, &member_opts)?;
                    paths.push(f.logits);
                    fwds.push(f);
                }
                let logits = merge_outputs(tape, &paths, lambda)?;
                Ok(BundleForward {
                    logits,
                    path_logits: paths,
                    models: fwds,
                })
            }
        }
    }

    /// Inference logits without gradient tracking.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict_with(x, None)
    }

    pub fn predict_with(&mut self, x: &Tensor<T>, lambda: Option<f64>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let opts = ForwardOptions {
            lambda,
            ..Default::default()
        };
        let f = self.forward(&mut tape, xv, &opts)?;
        Ok(tape.value(f.logits).clone())
    }
}

/// `λ · Σ paths`.
pub fn merge_outputs<T: Element>(tape: &mut Tape<T>, paths: &[Var], lambda: f64) -> Result<Var> {
    let first = *paths
        .first()
        .ok_or_else(|| Error::invalid("merge_outputs needs at least one path"))?;
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("merge weight must be positive, got {lambda}")));
    }
    let mut acc = first;
    for &p in &paths[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(if lambda == 1.0 { acc } else { tape.scale(acc, T::from_f64(lambda)) })
}

/// Builds the bundle described by `spec`.
pub fn build<T: Element>(spec: &ArchitectureSpec, seed: u64) -> Result<ModelBundle<T>> {
    spec.validate()?;
    let models = match spec.ensemble_mode {
        EnsembleMode::Baseline => vec![Network::member(spec, seed, 0)?],
        EnsembleMode::Pure | EnsembleMode::Merge => (0..spec.n)
            .map(|p| Network::member(spec, seed, p))
            .collect::<Result<_>>()?,
        EnsembleMode::Easy => vec![Network::grouped(spec, seed)?],
    };
    Ok(ModelBundle {
        spec: spec.clone(),
        models,
    })
}

/// EE-mode bundle with one factor set by an ablation code. `GGN` is plain EE;
/// `CL1` is a conventional wide network on the repeated input.
pub fn build_ablation_variant<T: Element>(code: AblationCode, spec: &ArchitectureSpec, seed: u64) -> Result<ModelBundle<T>> {
    let mut s = spec.clone();
    s.ensemble_mode = EnsembleMode::Easy;
    s.ablation = if code == AblationCode::GGN { None } else { Some(code) };
    build(&s, seed)
}

/// EE with per-block group counts `groups`.
pub fn build_stepwise<T: Element>(spec: &ArchitectureSpec, groups: &[usize], seed: u64) -> Result<ModelBundle<T>> {
    let s = spec.clone().with_stepwise(groups)?;
    build(&s, seed)
}

/// Packs the N member networks of `me` into the grouped network of `ee`.
///
/// Convolution weights and biases of member `p` become group `p` of the
/// corresponding grouped convolution; the head becomes `[W_1 … W_N]` with
/// bias `λ Σ b_p`.
pub fn transplant_me_to_ee<T: Element>(me: &ModelBundle<T>, ee: &mut ModelBundle<T>) -> Result<()> {
    if !matches!(me.mode(), EnsembleMode::Merge | EnsembleMode::Pure) {
        return Err(Error::StructuralMismatch(format!("source must be ME or PE, got {}", me.mode())));
    }
    if ee.mode() != EnsembleMode::Easy || ee.spec.ablation.is_some() || ee.spec.is_stepwise() {
        return Err(Error::StructuralMismatch("target must be a uniform EE bundle".into()));
    }
    let n = me.models.len();
    if ee.spec.n != n {
        return Err(Error::StructuralMismatch(format!("ME has {n} members, EE has N = {}", ee.spec.n)));
    }
    let target = &mut ee.models[0];
    let convs_me: Vec<Vec<&Conv1d<T>>> = me.models.iter().map(|m| m.convs().collect()).collect();
    let n_convs = target.convs().count();
    if convs_me.iter().any(|c| c.len() != n_convs) {
        return Err(Error::StructuralMismatch("convolution counts differ".into()));
    }
    if me.models.iter().any(|m| m.layers.len() != target.layers.len()) {
        return Err(Error::StructuralMismatch("layer sequences differ".into()));
    }
    if me.models.iter().any(Network::has_batch_norm) || target.has_batch_norm() {
        warn!("transplant with batch normalization: ME and EE are not exactly equivalent");
    }
    let mut ci = 0;
    for (li, layer) in target.layers.iter_mut().enumerate() {
        match layer {
            Layer::Conv(conv) => {
                let members: Vec<&Conv1d<T>> = convs_me.iter().map(|c| c[ci]).collect();
                let m0 = members[0];
                if conv.groups != n
                    || conv.out_channels != m0.out_channels * n
                    || conv.in_channels != m0.in_channels * n
                    || conv.kernel_size != m0.kernel_size
                {
                    return Err(Error::StructuralMismatch(format!(
                        "conv {ci}: EE {}->{} (groups {}) vs member {}->{}",
                        conv.in_channels, conv.out_channels, conv.groups, m0.in_channels, m0.out_channels
                    )));
                }
                let w: Vec<T> = members.iter().flat_map(|m| m.weight.data().iter().copied()).collect();
                let b: Vec<T> = members.iter().flat_map(|m| m.bias.data().iter().copied()).collect();
                conv.weight = Tensor::new(conv.weight.shape().to_vec(), w)?;
                conv.bias = Tensor::new(conv.bias.shape().to_vec(), b)?;
                ci += 1;
            }
            Layer::Norm(norm) => {
                let members: Vec<_> = me
                    .models
                    .iter()
                    .map(|m| match &m.layers[li] {
                        Layer::Norm(mn) => Ok(mn),
                        _ => Err(Error::StructuralMismatch(format!("layer {li} is not a norm in ME"))),
                    })
                    .collect::<Result<_>>()?;
                if !norm.running_mean.is_empty() {
                    norm.running_mean = members.iter().flat_map(|m| m.running_mean.iter().copied()).collect();
                    norm.running_var = members.iter().flat_map(|m| m.running_var.iter().copied()).collect();
                }
            }
            _ => {}
        }
    }
    let heads: Vec<_> = me.models.iter().map(|m| m.head.clone()).collect();
    if heads[0].in_features * n != target.head.in_features {
        return Err(Error::StructuralMismatch("head widths differ".into()));
    }
    target.head = pack_heads(&heads, ee.spec.resolved_lambda());
    Ok(())
}

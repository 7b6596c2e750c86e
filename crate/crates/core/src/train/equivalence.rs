use std::collections::BTreeMap;

use rand::Rng as _;
use serde::Serialize;

use crate::ensemble::{build, transplant_me_to_ee, ArchitectureSpec, EnsembleMode, ForwardOptions, LayerFamily, ModelBundle};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::tape::Tape;
use crate::tensor::{cat_channels, Tensor};
use crate::variation::repeat_rn;

const CHECK_BATCH: usize = 4;

#[derive(Debug, Clone, Serialize)]
pub struct FamilyDeviation {
    pub family: LayerFamily,
    /// Max |EE − ME| over the layer outputs of this family.
    pub forward: f64,
    /// Max |EE − ME| over the parameter gradients of this family, where the
    /// family has parameters.
    pub gradient: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub n: usize,
    pub trials: usize,
    pub tolerance: f64,
    pub families: Vec<FamilyDeviation>,
    pub max_logit_deviation: f64,
    pub max_gradient_deviation: f64,
    pub passed: bool,
}

impl std::fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<12} {:>12} {:>12}", "family", "forward", "gradient")?;
        for d in &self.families {
            let g = d.gradient.map_or("-".to_string(), |g| format!("{g:.3e}"));
            writeln!(f, "{:<12} {:>12.3e} {:>12}", d.family.name(), d.forward, g)?;
        }
        writeln!(f, "max logit deviation    {:.3e}", self.max_logit_deviation)?;
        writeln!(f, "max gradient deviation {:.3e}", self.max_gradient_deviation)?;
        write!(
            f,
            "{} (N={}, {} trials, tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.n,
            self.trials,
            self.tolerance
        )
    }
}

/// Row-wise concatenation of `(b, m_i)` tensors.
fn cat_features(parts: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
    let as3: Vec<Tensor<f64>> = parts
        .iter()
        .map(|p| {
            let (b, m) = p.dims2("equivalence")?;
            p.reshape(&[b, m, 1])
        })
        .collect::<Result<_>>()?;
    let joined = cat_channels(&as3.iter().collect::<Vec<_>>())?;
    let (b, m, _) = joined.dims3("equivalence")?;
    joined.reshape(&[b, m])
}

fn bump(map: &mut BTreeMap<LayerFamily, (f64, Option<f64>)>, fam: LayerFamily, fwd: Option<f64>, grad: Option<f64>) {
    let e = map.entry(fam).or_insert((0.0, None));
    if let Some(v) = fwd {
        e.0 = e.0.max(v);
    }
    if let Some(g) = grad {
        e.1 = Some(e.1.unwrap_or(0.0).max(g));
    }
}

/// Builds ME bundles, transplants them into EE, and compares layer outputs,
/// logits and parameter gradients on random inputs at 64-bit precision.
///
/// Gradients are compared after packing the ME gradients the way the
/// transplant packs weights, except that the shared EE head bias receives
/// the plain sum of the member head-bias gradients.
pub fn equivalence_check(spec: &ArchitectureSpec, n: usize, trials: usize, tolerance: f64, seed: u64) -> Result<EquivalenceReport> {
    let me_spec = spec.clone().with_mode(EnsembleMode::Merge, n);
    let ee_spec = spec.clone().with_mode(EnsembleMode::Easy, n);
    if me_spec.has_batch_norm() || ee_spec.has_batch_norm() {
        return Err(Error::Unsupported(
            "ME and EE are not completely equivalent when the normalizations are batch normalizations; \
             the check needs layer or group normalization"
                .into(),
        ));
    }
    if trials == 0 {
        return Err(Error::invalid("equivalence check needs at least one trial"));
    }
    let mut fams: BTreeMap<LayerFamily, (f64, Option<f64>)> = BTreeMap::new();
    let mut max_logit: f64 = 0.0;
    let mut max_grad: f64 = 0.0;
    for t in 0..trials {
        let s = derive_seed(seed, &[t as u64]);
        let mut me: ModelBundle<f64> = build(&me_spec, s)?;
        randomize_biases(&mut me, s);
        let mut ee: ModelBundle<f64> = build(&ee_spec, derive_seed(s, &[1]))?;
        transplant_me_to_ee(&me, &mut ee)?;

        let mut rng = stream(s, &[2]);
        let c = spec.input_channels;
        let x = Tensor::from_fn(&[CHECK_BATCH, c, spec.input_width], |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..CHECK_BATCH).map(|_| rng.random_range(0..spec.num_classes)).collect();
        let xr = repeat_rn(&x, n)?;
        let opts = ForwardOptions {
            training: true,
            trainable: true,
            trace: true,
            ..Default::default()
        };

        let mut tm = Tape::new();
        let xm = tm.constant(xr.clone());
        let fm = me.forward(&mut tm, xm, &opts)?;
        let lm = tm.cross_entropy(fm.logits, &labels)?;
        tm.backward(lm)?;

        let mut te = Tape::new();
        let xe = te.constant(xr);
        let fe = ee.forward(&mut te, xe, &opts)?;
        let le = te.cross_entropy(fe.logits, &labels)?;
        te.backward(le)?;

        let ee_trace = &fe.models[0].trace;
        for (i, &(fam, ev)) in ee_trace.iter().enumerate() {
            if fam == LayerFamily::Head {
                continue;
            }
            let parts: Vec<&Tensor<f64>> = fm.models.iter().map(|m| tm.value(m.trace[i].1)).collect();
            let joined = if parts[0].ndim() == 3 {
                cat_channels(&parts)?
            } else {
                cat_features(&parts)?
            };
            bump(&mut fams, fam, Some(te.value(ev).max_abs_diff(&joined)), None);
        }
        let dl = te.value(fe.logits).max_abs_diff(tm.value(fm.logits));
        bump(&mut fams, LayerFamily::Head, Some(dl), None);
        max_logit = max_logit.max(dl);

        // Gradients packed like weights; the shared head bias takes the sum.
        let mut me_grads = me.clone();
        for (model, f) in me_grads.models.iter_mut().zip(&fm.models) {
            for (p, &v) in model.params_mut().into_iter().zip(&f.params) {
                *p = tm.grad(v).ok_or_else(|| Error::invalid("missing ME gradient"))?;
            }
        }
        let mut packed = ee.clone();
        packed.spec.lambda = Some(1.0);
        transplant_me_to_ee(&me_grads, &mut packed)?;
        let ee_params = &fe.models[0].params;
        let n_params = ee_params.len();
        for (j, (&v, want)) in ee_params.iter().zip(packed.models[0].params()).enumerate() {
            let got = te.grad(v).ok_or_else(|| Error::invalid("missing EE gradient"))?;
            let d = got.max_abs_diff(want);
            let fam = if j + 2 >= n_params { LayerFamily::Head } else { LayerFamily::Conv };
            bump(&mut fams, fam, None, Some(d));
            max_grad = max_grad.max(d);
        }
    }
    let families = fams
        .into_iter()
        .map(|(family, (forward, gradient))| FamilyDeviation {
            family,
            forward,
            gradient,
        })
        .collect();
    Ok(EquivalenceReport {
        n,
        trials,
        tolerance,
        families,
        max_logit_deviation: max_logit,
        max_gradient_deviation: max_grad,
        passed: max_logit <= tolerance && max_grad <= tolerance,
    })
}

/// Freshly built convolutions have zero bias; give them random values so
/// bias handling is exercised.
fn randomize_biases(me: &mut ModelBundle<f64>, seed: u64) {
    let mut rng = stream(seed, &[3]);
    for m in &mut me.models {
        for layer in &mut m.layers {
            if let crate::ensemble::Layer::Conv(c) = layer {
                c.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
            }
        }
        m.head.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::NormKind;

    fn small() -> ArchitectureSpec {
        ArchitectureSpec::vgg8(3, 32, 6).truncated(2).unwrap()
    }

    #[test]
    fn small_vgg_passes() {
        let r = equivalence_check(&small(), 3, 2, 1e-10, 1).unwrap();
        assert!(r.passed, "{r}");
        let n1 = equivalence_check(&small(), 1, 1, 0.0, 1).unwrap();
        assert_eq!(n1.max_logit_deviation, 0.0, "{n1}");
    }

    #[test]
    fn batch_norm_is_refused() {
        let spec = small().with_norm(NormKind::Batch);
        assert!(matches!(equivalence_check(&spec, 2, 1, 1e-10, 1), Err(Error::Unsupported(_))));
    }
}

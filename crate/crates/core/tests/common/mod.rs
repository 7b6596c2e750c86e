#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use easyens::rng::{stream, Rng};
use easyens::{Tape, Tensor, Var};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    stream(seed, &[0xC0FFEE])
}

pub fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Scalar `Σ y ∘ r` with a fixed random weight `r`, so every output element
/// carries its own sensitivity.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> Var {
    let rv = tape.constant(r.clone());
    let prod = tape.mul(y, rv).expect("same shape");
    tape.sum(prod)
}

/// ‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12).
pub fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Plain loop cross-correlation, zero padded, single group.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, padding: usize) -> Tensor<f64> {
    let (n, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, ci, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(c, ci);
    let lo = (l + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; n * o * lo];
    for s in 0..n {
        for oc in 0..o {
            for t in 0..lo {
                let mut acc = b[oc];
                for ic in 0..c {
                    for j in 0..k {
                        let pos = (t * stride + j) as isize - padding as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += w.data()[(oc * c + ic) * k + j] * x.data()[(s * c + ic) * l + pos as usize];
                        }
                    }
                }
                out[(s * o + oc) * lo + t] = acc;
            }
        }
    }
    Tensor::new(vec![n, o, lo], out).unwrap()
}

/// Layer normalization of every instance over all its channels and samples.
pub fn naive_layer_norm(x: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let n = x.shape()[0];
    let per = x.numel() / n;
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(per) {
        let mean = row.iter().sum::<f64>() / per as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
        out.extend(row.iter().map(|v| (v - mean) / (var + eps).sqrt()));
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// `x W^T + b` by loops.
pub fn naive_dense(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Tensor<f64> {
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut out = vec![0.0; n * o];
    for s in 0..n {
        for r in 0..o {
            out[s * o + r] = b[r] + (0..i).map(|j| w.data()[r * i + j] * x.data()[s * i + j]).sum::<f64>();
        }
    }
    Tensor::new(vec![n, o], out).unwrap()
}

pub fn cat_features(parts: &[Tensor<f64>]) -> Tensor<f64> {
    let n = parts[0].shape()[0];
    let mut out = Vec::new();
    for s in 0..n {
        for p in parts {
            let m = p.shape()[1];
            out.extend_from_slice(&p.data()[s * m..(s + 1) * m]);
        }
    }
    let width = parts.iter().map(|p| p.shape()[1]).sum();
    Tensor::new(vec![n, width], out).unwrap()
}

//! Layer-level oracles: a grouped layer against its members run one by one.
//! Each case returns the max absolute deviation.

use easyens::tensor::cat_channels;
use easyens::{Tape, Tensor};
use rand::Rng as _;

use super::{cat_features, naive_conv, naive_dense, naive_layer_norm, rng, uniform};

pub fn conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, padding: usize, groups: usize) -> Tensor<f64> {
    let mut t = Tape::new();
    let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
    let y = t.conv1d(xv, wv, Some(bv), 1, padding, groups).unwrap();
    t.value(y).clone()
}

/// Grouped convolution with packed weights against N separate convolutions.
pub fn grouped_conv(case: u64) -> f64 {
    let mut r = rng(1000 + case);
    let n = r.random_range(1..6);
    let (cin, cout, k) = (r.random_range(1..4), r.random_range(1..4), [1, 3, 5][r.random_range(0..3)]);
    let len = r.random_range(k..16);
    let xs: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[3, cin, len], &mut r)).collect();
    let ws: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[cout, cin, k], &mut r)).collect();
    let bs: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[cout], &mut r)).collect();
    let outs: Vec<Tensor<f64>> = (0..n).map(|p| naive_conv(&xs[p], &ws[p], bs[p].data(), 1, k / 2)).collect();
    let want = cat_channels(&outs.iter().collect::<Vec<_>>()).unwrap();

    let x = cat_channels(&xs.iter().collect::<Vec<_>>()).unwrap();
    let w = Tensor::new(vec![n * cout, cin, k], ws.iter().flat_map(|w| w.data().to_vec()).collect()).unwrap();
    let b = Tensor::new(vec![n * cout], bs.iter().flat_map(|b| b.data().to_vec()).collect()).unwrap();
    conv(&x, &w, &b, k / 2, n).max_abs_diff(&want)
}

/// Group norm over N concatenated tensors against N layer norms.
pub fn group_norm(case: u64) -> f64 {
    let mut r = rng(2000 + case);
    let n = r.random_range(1..6);
    let (c, len) = (r.random_range(1..5), r.random_range(2..20));
    let xs: Vec<Tensor<f64>> = (0..n)
        .map(|p| {
            // Different scales and offsets per member.
            let s = 1.0 + p as f64;
            let x = uniform(&[3, c, len], &mut r);
            Tensor::from_fn(x.shape(), |i| s * x.data()[i] + p as f64)
        })
        .collect();
    let lns: Vec<Tensor<f64>> = xs.iter().map(|x| naive_layer_norm(x, 1e-5)).collect();
    let want = cat_channels(&lns.iter().collect::<Vec<_>>()).unwrap();
    let mut t = Tape::new();
    let xv = t.constant(cat_channels(&xs.iter().collect::<Vec<_>>()).unwrap());
    let y = t.group_norm(xv, n, 1e-5).unwrap();
    t.value(y).max_abs_diff(&want)
}

/// Dense layer against the loop oracle and against a kernel-1 convolution.
pub fn dense_as_conv(case: u64) -> f64 {
    let mut r = rng(3000 + case);
    let (b, i, o) = (r.random_range(1..5), r.random_range(1..10), r.random_range(1..7));
    let v = uniform(&[b, i], &mut r);
    let w = uniform(&[o, i], &mut r);
    let bias = uniform(&[o], &mut r);
    let mut t = Tape::new();
    let (vv, wv, bv) = (t.constant(v.clone()), t.constant(w.clone()), t.constant(bias.clone()));
    let dense = t.dense(vv, wv, Some(bv)).unwrap();
    let as_conv = conv(&v.reshape(&[b, i, 1]).unwrap(), &w.reshape(&[o, i, 1]).unwrap(), &bias, 0, 1)
        .reshape(&[b, o])
        .unwrap();
    let d1 = t.value(dense).max_abs_diff(&naive_dense(&v, &w, bias.data()));
    d1.max(t.value(dense).max_abs_diff(&as_conv))
}

/// Grouped kernel-1 convolution against N independent dense maps.
pub fn grouped_dense(case: u64) -> f64 {
    let mut r = rng(4000 + case);
    let n = r.random_range(1..6);
    let (b, i, o) = (r.random_range(1..5), r.random_range(1..6), r.random_range(1..5));
    let vs: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[b, i], &mut r)).collect();
    let ws: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[o, i], &mut r)).collect();
    let bs: Vec<Tensor<f64>> = (0..n).map(|_| uniform(&[o], &mut r)).collect();
    let want = cat_features(&(0..n).map(|p| naive_dense(&vs[p], &ws[p], bs[p].data())).collect::<Vec<_>>());

    let v = cat_features(&vs).reshape(&[b, n * i, 1]).unwrap();
    let w = Tensor::new(vec![n * o, i, 1], ws.iter().flat_map(|w| w.data().to_vec()).collect()).unwrap();
    let bias = Tensor::new(vec![n * o], bs.iter().flat_map(|b| b.data().to_vec()).collect()).unwrap();
    conv(&v, &w, &bias, 0, n).reshape(&[b, n * o]).unwrap().max_abs_diff(&want)
}

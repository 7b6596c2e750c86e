use easyens::rng::Rng;
use easyens::{finite_difference_grad, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{rel_err, rng, uniform, weighted_sum};

const STEP: f64 = 1e-5;

/// Max relative error between backward() and central differences over every
/// input of `f`, which maps leaves to a scalar loss.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).unwrap();
        let numeric = finite_difference_grad(
            |probe| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, other)| t.constant(if j == i { probe.clone() } else { other.clone() }))
                    .collect();
                let l = f(&mut t, &vs);
                Ok(t.value(l).clone())
            },
            x,
            STEP,
        )
        .unwrap();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Inputs kept away from the kinks of relu and max so central differences
/// never straddle one.
fn spaced(shape: &[usize], r: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut levels: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * 0.05 - n as f64 * 0.025).collect();
    levels.shuffle(r);
    Tensor::new(shape.to_vec(), levels).unwrap()
}

pub fn conv1d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let groups = [1, 2, 3][r.random_range(0..3)];
    let cin = groups * r.random_range(1..3);
    let cout = groups * r.random_range(1..3);
    let k = [1, 3, 5][r.random_range(0..3)];
    let stride = r.random_range(1..3);
    let padding = r.random_range(0..=k / 2);
    let len = r.random_range(k.max(4)..10);
    let x = uniform(&[2, cin, len], &mut r);
    let w = uniform(&[cout, cin / groups, k], &mut r);
    let b = uniform(&[cout], &mut r);
    let lout = (len + 2 * padding - k) / stride + 1;
    let weight = uniform(&[2, cout, lout], &mut r);
    check(&[x, w, b], |t, v| {
        let y = t.conv1d(v[0], v[1], Some(v[2]), stride, padding, groups).unwrap();
        weighted_sum(t, y, &weight)
    })
}

pub fn group_norm(seed: u64) -> f64 {
    let mut r = rng(100 + seed);
    let groups = r.random_range(1..4);
    let c = groups * r.random_range(1..3);
    let x = uniform(&[2, c, r.random_range(3..7)], &mut r);
    let weight = uniform(x.shape(), &mut r);
    check(&[x], |t, v| {
        let y = t.group_norm(v[0], groups, 1e-5).unwrap();
        weighted_sum(t, y, &weight)
    })
}

pub fn batch_norm(seed: u64) -> f64 {
    let mut r = rng(200 + seed);
    let x = uniform(&[r.random_range(2..4), r.random_range(1..4), r.random_range(2..6)], &mut r);
    let weight = uniform(x.shape(), &mut r);
    check(&[x], |t, v| {
        let (y, _, _) = t.batch_norm_train(v[0], 1e-5).unwrap();
        weighted_sum(t, y, &weight)
    })
}

pub fn dense(seed: u64) -> f64 {
    let mut r = rng(300 + seed);
    let (n, i, o) = (r.random_range(1..4), r.random_range(1..7), r.random_range(1..5));
    let x = uniform(&[n, i], &mut r);
    let w = uniform(&[o, i], &mut r);
    let b = uniform(&[o], &mut r);
    let weight = uniform(&[n, o], &mut r);
    check(&[x, w, b], |t, v| {
        let y = t.dense(v[0], v[1], Some(v[2])).unwrap();
        weighted_sum(t, y, &weight)
    })
}

pub fn relu(seed: u64) -> f64 {
    let mut r = rng(400 + seed);
    let x = spaced(&[2, r.random_range(1..4), r.random_range(2..8)], &mut r);
    let weight = uniform(x.shape(), &mut r);
    check(&[x], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, &weight)
    })
}

pub fn max_pool(seed: u64) -> f64 {
    let mut r = rng(500 + seed);
    let window = r.random_range(1..4);
    let x = spaced(&[2, r.random_range(1..4), window * r.random_range(1..4)], &mut r);
    let out_w = x.shape()[2] / window;
    let weight = uniform(&[2, x.shape()[1], out_w], &mut r);
    check(&[x], |t, v| {
        let y = t.max_pool(v[0], window).unwrap();
        weighted_sum(t, y, &weight)
    })
}

pub fn global_avg_pool(seed: u64) -> f64 {
    let mut r = rng(600 + seed);
    let x = uniform(&[2, r.random_range(1..5), r.random_range(1..9)], &mut r);
    let weight = uniform(&[2, x.shape()[1]], &mut r);
    check(&[x], |t, v| {
        let y = t.global_avg_pool(v[0]).unwrap();
        weighted_sum(t, y, &weight)
    })
}

pub fn cross_entropy(seed: u64) -> f64 {
    let mut r = rng(700 + seed);
    let (n, k) = (r.random_range(1..5), r.random_range(2..7));
    let logits = uniform(&[n, k], &mut r);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
    check(&[logits], |t, v| t.cross_entropy(v[0], &labels).unwrap())
}

pub fn concat_slice_scale(seed: u64) -> f64 {
    let mut r = rng(800 + seed);
    let w = r.random_range(1..6);
    let a = uniform(&[2, r.random_range(1..4), w], &mut r);
    let b = uniform(&[2, r.random_range(1..4), w], &mut r);
    let ca = a.shape()[1];
    let total = ca + b.shape()[1];
    let start = r.random_range(0..total);
    let end = r.random_range(start + 1..=total);
    let s = r.random_range(-2.0..2.0);
    let weight = uniform(&[2, end - start, w], &mut r);
    check(&[a, b], |t, v| {
        let c = t.concat_channels(&[v[0], v[1]]).unwrap();
        let sl = t.channel_slice(c, start, end).unwrap();
        let y = t.scale(sl, s);
        weighted_sum(t, y, &weight)
    })
}

pub fn three_layer_network(seed: u64) -> f64 {
    let mut r = rng(900 + seed);
    let (c, h, k, len) = (3, 4, 3, 8);
    let x = uniform(&[2, c, len], &mut r);
    let w1 = uniform(&[h, c, 3], &mut r);
    let w2 = uniform(&[h, h / 2, 3], &mut r);
    let wd = uniform(&[k, h], &mut r);
    let bd = uniform(&[k], &mut r);
    let labels = vec![r.random_range(0..k), r.random_range(0..k)];
    check(&[x, w1, w2, wd, bd], |t, v| {
        let y = t.conv1d(v[0], v[1], None, 1, 1, 1).unwrap();
        let y = t.group_norm(y, 2, 1e-5).unwrap();
        let y = t.conv1d(y, v[2], None, 1, 1, 2).unwrap();
        let z = t.global_avg_pool(y).unwrap();
        let logits = t.dense(z, v[3], Some(v[4])).unwrap();
        t.cross_entropy(logits, &labels).unwrap()
    })
}

/// Every layer check, for suites that sweep them all.
pub const ALL: &[(&str, fn(u64) -> f64)] = &[
    ("conv1d", conv1d),
    ("group_norm", group_norm),
    ("batch_norm", batch_norm),
    ("dense", dense),
    ("relu", relu),
    ("max_pool", max_pool),
    ("global_avg_pool", global_avg_pool),
    ("cross_entropy", cross_entropy),
    ("concat_slice_scale", concat_slice_scale),
    ("three_layer_network", three_layer_network),
];

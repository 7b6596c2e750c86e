//! Slice-level forward/backward kernels behind the tape operations.
//!
//! All buffers are row-major: activations are `(batch, channels, width)`,
//! convolution weights `(out, in / groups, kernel)`, dense weights `(out, in)`.

use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Output positions `t` for which tap `k` reads inside the input.
    #[inline]
    fn valid_range(&self, k: usize, out_width: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.padding > k {
            (self.padding - k).div_ceil(s)
        } else {
            0
        };
        // t*s + k - p <= width - 1
        let top = self.width + self.padding;
        let hi = if top > k {
            ((top - k - 1) / s + 1).min(out_width)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub fn conv1d_forward<T: Element>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let ow = g.out_width();
    let (ipg, opg, k_len) = (g.in_per_group(), g.out_per_group(), g.kernel);
    for i in 0..g.batch {
        for oc in 0..g.out_channels {
            let grp = oc / opg;
            let o = &mut out[(i * g.out_channels + oc) * ow..][..ow];
            let b0 = bias.map_or(T::zero(), |b| b[oc]);
            o.iter_mut().for_each(|v| *v = b0);
            for j in 0..ipg {
                let ic = grp * ipg + j;
                let xr = &x[(i * g.in_channels + ic) * g.width..][..g.width];
                let wr = &w[(oc * ipg + j) * k_len..][..k_len];
                for (k, &wv) in wr.iter().enumerate() {
                    let (lo, hi) = g.valid_range(k, ow);
                    if lo >= hi {
                        continue;
                    }
                    if g.stride == 1 {
                        let off = lo + k - g.padding;
                        let xs = &xr[off..off + (hi - lo)];
                        for (ov, &xv) in o[lo..hi].iter_mut().zip(xs) {
                            *ov += wv * xv;
                        }
                    } else {
                        for t in lo..hi {
                            o[t] += wv * xr[t * g.stride + k - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for (&p, &q) in ca.remainder().iter().zip(cb.remainder()) {
        tail += p * q;
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Accumulates input, weight and bias gradients for one convolution.
pub fn conv1d_backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let ow = g.out_width();
    let (ipg, opg, k_len) = (g.in_per_group(), g.out_per_group(), g.kernel);
    for i in 0..g.batch {
        for oc in 0..g.out_channels {
            let grp = oc / opg;
            let d = &dy[(i * g.out_channels + oc) * ow..][..ow];
            if let Some(db) = db.as_deref_mut() {
                db[oc] += d.iter().copied().sum::<T>();
            }
            for j in 0..ipg {
                let ic = grp * ipg + j;
                let xoff = (i * g.in_channels + ic) * g.width;
                let woff = (oc * ipg + j) * k_len;
                for k in 0..k_len {
                    let (lo, hi) = g.valid_range(k, ow);
                    if lo >= hi {
                        continue;
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw[woff + k] += if g.stride == 1 {
                            let off = xoff + lo + k - g.padding;
                            dot(&d[lo..hi], &x[off..off + (hi - lo)])
                        } else {
                            let mut acc = T::zero();
                            for t in lo..hi {
                                acc += d[t] * x[xoff + t * g.stride + k - g.padding];
                            }
                            acc
                        };
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[woff + k];
                        if g.stride == 1 {
                            let off = xoff + lo + k - g.padding;
                            for (dxv, &dv) in dx[off..off + (hi - lo)].iter_mut().zip(&d[lo..hi]) {
                                *dxv += wv * dv;
                            }
                        } else {
                            for t in lo..hi {
                                dx[xoff + t * g.stride + k - g.padding] += wv * d[t];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Normalizes each contiguous segment of `seg_len` values; returns `1/sqrt(var + eps)` per segment.
pub fn segment_norm_forward<T: Element>(x: &[T], seg_len: usize, eps: T, out: &mut [T]) -> Vec<T> {
    let n = T::from_f64(seg_len as f64);
    x.chunks_exact(seg_len)
        .zip(out.chunks_exact_mut(seg_len))
        .map(|(xs, ys)| {
            let mean = xs.iter().copied().sum::<T>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for (y, &v) in ys.iter_mut().zip(xs) {
                *y = (v - mean) * inv;
            }
            inv
        })
        .collect()
}

/// Gradient of per-segment normalization given its output `y`.
pub fn segment_norm_backward<T: Element>(y: &[T], dy: &[T], inv: &[T], seg_len: usize, dx: &mut [T]) {
    let n = T::from_f64(seg_len as f64);
    for (((ys, ds), dxs), &iv) in y
        .chunks_exact(seg_len)
        .zip(dy.chunks_exact(seg_len))
        .zip(dx.chunks_exact_mut(seg_len))
        .zip(inv)
    {
        let mean_d = ds.iter().copied().sum::<T>() / n;
        let mean_dy = ys.iter().zip(ds).map(|(&a, &b)| a * b).sum::<T>() / n;
        for ((dxv, &yv), &dv) in dxs.iter_mut().zip(ys).zip(ds) {
            *dxv += iv * (dv - mean_d - yv * mean_dy);
        }
    }
}

/// Per-channel statistics over `(batch, width)`: returns `(mean, population variance)`.
pub fn channel_stats<T: Element>(x: &[T], b: usize, c: usize, w: usize) -> (Vec<T>, Vec<T>) {
    let n = T::from_f64((b * w) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for i in 0..b {
            s += x[(i * c + ch) * w..][..w].iter().copied().sum::<T>();
        }
        let m = s / n;
        let mut v = T::zero();
        for i in 0..b {
            v += x[(i * c + ch) * w..][..w].iter().map(|&a| (a - m) * (a - m)).sum::<T>();
        }
        mean[ch] = m;
        var[ch] = v / n;
    }
    (mean, var)
}

pub fn channel_affine<T: Element>(x: &[T], b: usize, c: usize, w: usize, mean: &[T], inv: &[T], out: &mut [T]) {
    for i in 0..b {
        for ch in 0..c {
            let off = (i * c + ch) * w;
            for (y, &v) in out[off..off + w].iter_mut().zip(&x[off..off + w]) {
                *y = (v - mean[ch]) * inv[ch];
            }
        }
    }
}

/// Gradient of batch normalization with batch statistics.
pub fn batch_norm_backward<T: Element>(y: &[T], dy: &[T], inv: &[T], b: usize, c: usize, w: usize, dx: &mut [T]) {
    let n = T::from_f64((b * w) as f64);
    for ch in 0..c {
        let mut sd = T::zero();
        let mut sdy = T::zero();
        for i in 0..b {
            let off = (i * c + ch) * w;
            for t in off..off + w {
                sd += dy[t];
                sdy += dy[t] * y[t];
            }
        }
        let (md, mdy) = (sd / n, sdy / n);
        for i in 0..b {
            let off = (i * c + ch) * w;
            for t in off..off + w {
                dx[t] += inv[ch] * (dy[t] - md - y[t] * mdy);
            }
        }
    }
}

pub fn dense_forward<T: Element>(x: &[T], w: &[T], bias: Option<&[T]>, b: usize, n: usize, m: usize, out: &mut [T]) {
    for i in 0..b {
        let xr = &x[i * n..][..n];
        for o in 0..m {
            let wr = &w[o * n..][..n];
            let dot: T = xr.iter().zip(wr).map(|(&a, &c)| a * c).sum();
            out[i * m + o] = dot + bias.map_or(T::zero(), |bb| bb[o]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Element>(
    x: &[T],
    w: &[T],
    dy: &[T],
    b: usize,
    n: usize,
    m: usize,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    for i in 0..b {
        for o in 0..m {
            let d = dy[i * m + o];
            if let Some(db) = db.as_deref_mut() {
                db[o] += d;
            }
            if let Some(dw) = dw.as_deref_mut() {
                for (g, &xv) in dw[o * n..][..n].iter_mut().zip(&x[i * n..][..n]) {
                    *g += d * xv;
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                for (g, &wv) in dx[i * n..][..n].iter_mut().zip(&w[o * n..][..n]) {
                    *g += d * wv;
                }
            }
        }
    }
}

/// Non-overlapping max pooling over rows of length `w`; returns argmax positions into `x`.
pub fn max_pool_forward<T: Element>(x: &[T], rows: usize, w: usize, window: usize, out: &mut [T]) -> Vec<usize> {
    let ow = w / window;
    let mut arg = Vec::with_capacity(rows * ow);
    for r in 0..rows {
        for t in 0..ow {
            let start = r * w + t * window;
            let mut best = start;
            for p in start + 1..start + window {
                if x[p] > x[best] {
                    best = p;
                }
            }
            out[r * ow + t] = x[best];
            arg.push(best);
        }
    }
    arg
}

/// Row-wise softmax of `z / temperature` with max subtraction.
pub fn softmax_rows<T: Element>(z: &[T], k: usize, inv_temperature: T, out: &mut [T]) {
    for (zr, or) in z.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let mut mx = T::neg_infinity();
        for &v in zr {
            let s = v * inv_temperature;
            if s > mx {
                mx = s;
            }
        }
        let mut total = T::zero();
        for (o, &v) in or.iter_mut().zip(zr) {
            *o = (v * inv_temperature - mx).exp();
            total += *o;
        }
        for o in or.iter_mut() {
            *o = *o / total;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_covers_padding() {
        let g = ConvGeom {
            batch: 1,
            in_channels: 1,
            out_channels: 1,
            width: 5,
            kernel: 3,
            stride: 1,
            padding: 1,
            groups: 1,
        };
        assert_eq!(g.out_width(), 5);
        assert_eq!(g.valid_range(0, 5), (1, 5));
        assert_eq!(g.valid_range(1, 5), (0, 5));
        assert_eq!(g.valid_range(2, 5), (0, 4));
    }

    #[test]
    fn strided_range() {
        let g = ConvGeom {
            batch: 1,
            in_channels: 1,
            out_channels: 1,
            width: 8,
            kernel: 3,
            stride: 2,
            padding: 1,
            groups: 1,
        };
        assert_eq!(g.out_width(), 4);
        // t*2 + k - 1 in [0, 8)
        assert_eq!(g.valid_range(0, 4), (1, 4));
        assert_eq!(g.valid_range(2, 4), (0, 4));
    }

    #[test]
    fn max_pool_example() {
        let x = [1.0f64, 3.0, 2.0, 0.0];
        let mut out = [0.0; 2];
        let arg = max_pool_forward(&x, 1, 4, 2, &mut out);
        assert_eq!(out, [3.0, 2.0]);
        assert_eq!(arg, vec![1, 2]);
    }
}

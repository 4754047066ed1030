//! Raw slice kernels behind the differentiable ops.
//!
//! Convolution and transposed convolution share three primitives. For a
//! convolution with input `[B, Cin, Lin]`, weight `[Cout, Cin, K]` and output
//! `[B, Cout, Lout]` the index relation is `in_pos = out_pos * stride + k - pad`:
//!
//! * [`conv_gather`]: conv forward, transposed-conv input gradient
//! * [`conv_scatter`]: conv input gradient, transposed-conv forward
//! * [`conv_weight_grad`]: weight gradient for both
//!
//! Parallel loops split over the batch (activations) or output channels
//! (weights), so each output element is summed by one thread in a fixed order.

use super::tensor::Element;
use crate::par::if_rayon;
#[cfg(feature = "parallel")]
use crate::par::*;

/// Sizes of a 1-D convolution in its forward (correlation) orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Range of output positions `o` whose tap `k` lands inside the input.
    #[inline]
    fn valid(&self, k: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(s)
        } else {
            0
        };
        let top = self.len_in + self.pad;
        let hi = if top > k {
            ((top - k - 1) / s + 1).min(self.len_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// f64-accumulated dot product.
#[inline]
pub fn dot<T: Element>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j].as_f64() * b[j].as_f64();
        acc[1] += a[j + 1].as_f64() * b[j + 1].as_f64();
        acc[2] += a[j + 2].as_f64() * b[j + 2].as_f64();
        acc[3] += a[j + 3].as_f64() * b[j + 3].as_f64();
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j].as_f64() * b[j].as_f64();
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `out[b, co, o] += sum_{ci,k} w[co, ci, k] * x[b, ci, o*s + k - p]`.
pub fn conv_gather<T: Element>(x: &[T], w: &[T], g: &ConvGeom, out: &mut [T]) {
    let chunk = g.c_out * g.len_out;
    if chunk == 0 {
        return;
    }
    let per_batch = |(b, ob): (usize, &mut [T])| {
        let xb = &x[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
        for co in 0..g.c_out {
            let orow = &mut ob[co * g.len_out..(co + 1) * g.len_out];
            for ci in 0..g.c_in {
                let xrow = &xb[ci * g.len_in..(ci + 1) * g.len_in];
                let wrow = &w[(co * g.c_in + ci) * g.kernel..(co * g.c_in + ci + 1) * g.kernel];
                for (k, &wv) in wrow.iter().enumerate() {
                    if wv == T::zero() {
                        continue;
                    }
                    let (lo, hi) = g.valid(k);
                    if lo >= hi {
                        continue;
                    }
                    if g.stride == 1 {
                        let start = lo + k - g.pad;
                        axpy(wv, &xrow[start..start + (hi - lo)], &mut orow[lo..hi]);
                    } else {
                        for o in lo..hi {
                            orow[o] = orow[o] + wv * xrow[o * g.stride + k - g.pad];
                        }
                    }
                }
            }
        }
    };
    if_rayon!(
        out.par_chunks_mut(chunk).enumerate().for_each(per_batch),
        out.chunks_mut(chunk).enumerate().for_each(per_batch)
    );
}

/// `gx[b, ci, o*s + k - p] += sum_{co} w[co, ci, k] * gy[b, co, o]`.
pub fn conv_scatter<T: Element>(gy: &[T], w: &[T], g: &ConvGeom, gx: &mut [T]) {
    let chunk = g.c_in * g.len_in;
    if chunk == 0 {
        return;
    }
    let per_batch = |(b, gxb): (usize, &mut [T])| {
        let gyb = &gy[b * g.c_out * g.len_out..(b + 1) * g.c_out * g.len_out];
        for ci in 0..g.c_in {
            let xrow = &mut gxb[ci * g.len_in..(ci + 1) * g.len_in];
            for co in 0..g.c_out {
                let grow = &gyb[co * g.len_out..(co + 1) * g.len_out];
                let wrow = &w[(co * g.c_in + ci) * g.kernel..(co * g.c_in + ci + 1) * g.kernel];
                for (k, &wv) in wrow.iter().enumerate() {
                    if wv == T::zero() {
                        continue;
                    }
                    let (lo, hi) = g.valid(k);
                    if lo >= hi {
                        continue;
                    }
                    if g.stride == 1 {
                        let start = lo + k - g.pad;
                        axpy(wv, &grow[lo..hi], &mut xrow[start..start + (hi - lo)]);
                    } else {
                        for (o, &gv) in grow.iter().enumerate().take(hi).skip(lo) {
                            let i = o * g.stride + k - g.pad;
                            xrow[i] = xrow[i] + wv * gv;
                        }
                    }
                }
            }
        }
    };
    if_rayon!(
        gx.par_chunks_mut(chunk).enumerate().for_each(per_batch),
        gx.chunks_mut(chunk).enumerate().for_each(per_batch)
    );
}

/// `gw[co, ci, k] += sum_{b,o} gy[b, co, o] * x[b, ci, o*s + k - p]`.
pub fn conv_weight_grad<T: Element>(gy: &[T], x: &[T], g: &ConvGeom, gw: &mut [T]) {
    let chunk = g.c_in * g.kernel;
    if chunk == 0 {
        return;
    }
    let per_out = |(co, gwc): (usize, &mut [T])| {
        let mut acc = vec![0.0f64; chunk];
        for b in 0..g.batch {
            let grow = &gy[(b * g.c_out + co) * g.len_out..(b * g.c_out + co + 1) * g.len_out];
            for ci in 0..g.c_in {
                let xrow = &x[(b * g.c_in + ci) * g.len_in..(b * g.c_in + ci + 1) * g.len_in];
                for k in 0..g.kernel {
                    let (lo, hi) = g.valid(k);
                    if lo >= hi {
                        continue;
                    }
                    acc[ci * g.kernel + k] += if g.stride == 1 {
                        let start = lo + k - g.pad;
                        dot(&grow[lo..hi], &xrow[start..start + (hi - lo)])
                    } else {
                        (lo..hi)
                            .map(|o| grow[o].as_f64() * xrow[o * g.stride + k - g.pad].as_f64())
                            .sum()
                    };
                }
            }
        }
        for (dst, a) in gwc.iter_mut().zip(acc) {
            *dst = *dst + T::from_f64(a);
        }
    };
    if_rayon!(
        gw.par_chunks_mut(chunk).enumerate().for_each(per_out),
        gw.chunks_mut(chunk).enumerate().for_each(per_out)
    );
}

/// Sum of `gy[b, c, :]` over batch and length, per channel.
pub fn channel_sums<T: Element>(gy: &[T], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut sums = vec![0.0f64; channels];
    for b in 0..batch {
        for (c, s) in sums.iter_mut().enumerate() {
            let row = &gy[(b * channels + c) * len..(b * channels + c + 1) * len];
            *s += row.iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    sums
}

/// `y[b, m] = bias[m] + sum_n x[b, n] * w[m, n]`.
pub fn dense_forward<T: Element>(x: &[T], w: &[T], bias: &[T], n: usize, m: usize, y: &mut [T]) {
    if m == 0 {
        return;
    }
    let per_row = |(b, yb): (usize, &mut [T])| {
        let xb = &x[b * n..(b + 1) * n];
        for (j, yv) in yb.iter_mut().enumerate() {
            *yv = T::from_f64(bias[j].as_f64() + dot(xb, &w[j * n..(j + 1) * n]));
        }
    };
    if_rayon!(
        y.par_chunks_mut(m).enumerate().for_each(per_row),
        y.chunks_mut(m).enumerate().for_each(per_row)
    );
}

/// `gx[b, :] += sum_m gy[b, m] * w[m, :]`.
pub fn dense_grad_input<T: Element>(gy: &[T], w: &[T], n: usize, m: usize, gx: &mut [T]) {
    if n == 0 {
        return;
    }
    let per_row = |(b, gxb): (usize, &mut [T])| {
        let mut acc = vec![0.0f64; n];
        for j in 0..m {
            let gv = gy[b * m + j].as_f64();
            if gv == 0.0 {
                continue;
            }
            for (a, &wv) in acc.iter_mut().zip(&w[j * n..(j + 1) * n]) {
                *a += gv * wv.as_f64();
            }
        }
        for (dst, a) in gxb.iter_mut().zip(acc) {
            *dst = *dst + T::from_f64(a);
        }
    };
    if_rayon!(
        gx.par_chunks_mut(n).enumerate().for_each(per_row),
        gx.chunks_mut(n).enumerate().for_each(per_row)
    );
}

/// `gw[m, :] += sum_b gy[b, m] * x[b, :]`.
pub fn dense_grad_weight<T: Element>(
    gy: &[T],
    x: &[T],
    batch: usize,
    n: usize,
    m: usize,
    gw: &mut [T],
) {
    if n == 0 {
        return;
    }
    let per_row = |(j, gwj): (usize, &mut [T])| {
        let mut acc = vec![0.0f64; n];
        for b in 0..batch {
            let gv = gy[b * m + j].as_f64();
            if gv == 0.0 {
                continue;
            }
            for (a, &xv) in acc.iter_mut().zip(&x[b * n..(b + 1) * n]) {
                *a += gv * xv.as_f64();
            }
        }
        for (dst, a) in gwj.iter_mut().zip(acc) {
            *dst = *dst + T::from_f64(a);
        }
    };
    if_rayon!(
        gw.par_chunks_mut(n).enumerate().for_each(per_row),
        gw.chunks_mut(n).enumerate().for_each(per_row)
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.c_out * g.len_out];
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for o in 0..g.len_out {
                    let mut s = 0.0;
                    for ci in 0..g.c_in {
                        for k in 0..g.kernel {
                            let i = (o * g.stride + k) as isize - g.pad as isize;
                            if i >= 0 && (i as usize) < g.len_in {
                                s += w[(co * g.c_in + ci) * g.kernel + k]
                                    * x[(b * g.c_in + ci) * g.len_in + i as usize];
                            }
                        }
                    }
                    out[(b * g.c_out + co) * g.len_out + o] = s;
                }
            }
        }
        out
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn gather_matches_nested_loops_for_odd_geometries() {
        let mut seed = 3;
        for &(len_in, k, s, p) in &[(7, 3, 1, 1), (9, 4, 2, 0), (5, 5, 1, 2), (11, 3, 3, 2), (4, 1, 1, 0)] {
            let len_out = (len_in + 2 * p - k) / s + 1;
            let g = ConvGeom { batch: 2, c_in: 3, c_out: 2, len_in, len_out, kernel: k, stride: s, pad: p };
            let x: Vec<f64> = (0..g.batch * g.c_in * len_in).map(|_| lcg(&mut seed)).collect();
            let w: Vec<f64> = (0..g.c_out * g.c_in * k).map(|_| lcg(&mut seed)).collect();
            let mut out = vec![0.0; g.batch * g.c_out * len_out];
            conv_gather(&x, &w, &g, &mut out);
            let want = naive_conv(&x, &w, &g);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{len_in} {k} {s} {p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn valid_range_excludes_padding_only_taps() {
        let g = ConvGeom { batch: 1, c_in: 1, c_out: 1, len_in: 2, len_out: 6, kernel: 1, stride: 1, pad: 2 };
        assert_eq!(g.valid(0), (2, 4));
    }

    #[test]
    fn dot_handles_tails() {
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(dot(&a, &a), 55.0);
    }
}

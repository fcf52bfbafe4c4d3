//! Same-padded 2-D convolution over (frequency, time), ReLU, and max pooling
//! along frequency. Feature maps are `[channel][freq][time]`, time fastest.

use crate::tensor::{gemm, Real, View};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub freq: usize,
    pub time: usize,
    pub kf: usize,
    pub kt: usize,
}

impl ConvShape {
    pub fn patch(&self) -> usize {
        self.c_in * self.kf * self.kt
    }

    pub fn plane(&self) -> usize {
        self.freq * self.time
    }
}

/// Unfold zero-padded patches: row `(ci*kf + i)*kt + j`, column `f*time + t`.
pub(crate) fn im2col<T: Real>(input: &[T], s: ConvShape, cols: &mut Vec<T>) {
    let (pf, pt) = (s.kf / 2, s.kt / 2);
    let plane = s.plane();
    cols.clear();
    cols.resize(s.patch() * plane, T::zero());
    for ci in 0..s.c_in {
        let src = &input[ci * plane..(ci + 1) * plane];
        for i in 0..s.kf {
            for j in 0..s.kt {
                let row = &mut cols[((ci * s.kf + i) * s.kt + j) * plane..][..plane];
                // Output column t reads source column t + j - pt.
                let t_lo = pt.saturating_sub(j);
                let t_hi = (s.time + pt).saturating_sub(j).min(s.time);
                if t_lo >= t_hi {
                    continue;
                }
                for f in 0..s.freq {
                    let sf = f + i;
                    if sf < pf || sf - pf >= s.freq {
                        continue;
                    }
                    let sf = sf - pf;
                    let dst = &mut row[f * s.time + t_lo..f * s.time + t_hi];
                    let from = sf * s.time + t_lo + j - pt;
                    dst.copy_from_slice(&src[from..from + (t_hi - t_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back to the input map.
pub(crate) fn col2im(d_cols: &[f64], s: ConvShape, d_input: &mut [f64]) {
    let (pf, pt) = (s.kf / 2, s.kt / 2);
    let plane = s.plane();
    d_input.fill(0.0);
    for ci in 0..s.c_in {
        let dst = &mut d_input[ci * plane..(ci + 1) * plane];
        for i in 0..s.kf {
            for j in 0..s.kt {
                let row = &d_cols[((ci * s.kf + i) * s.kt + j) * plane..][..plane];
                let t_lo = pt.saturating_sub(j);
                let t_hi = (s.time + pt).saturating_sub(j).min(s.time);
                if t_lo >= t_hi {
                    continue;
                }
                for f in 0..s.freq {
                    let sf = f + i;
                    if sf < pf || sf - pf >= s.freq {
                        continue;
                    }
                    let sf = sf - pf;
                    let from = sf * s.time + t_lo + j - pt;
                    let src = &row[f * s.time + t_lo..f * s.time + t_hi];
                    for (d, g) in dst[from..from + src.len()].iter_mut().zip(src) {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// Pre-activation `kernel * input + bias`, `[c_out][freq][time]`.
pub(crate) fn conv_forward<T: Real>(
    input: &[T],
    s: ConvShape,
    kernel: &[T],
    bias: &[T],
    cols: &mut Vec<T>,
) -> Vec<T> {
    im2col(input, s, cols);
    let plane = s.plane();
    let mut out = vec![T::zero(); s.c_out * plane];
    for (co, b) in bias.iter().enumerate() {
        out[co * plane..(co + 1) * plane].fill(*b);
    }
    gemm(
        T::one(),
        View::row_major(kernel, s.c_out, s.patch()),
        View::row_major(cols, s.patch(), plane),
        T::one(),
        &mut out,
    );
    out
}

/// ReLU followed by non-overlapping max pooling of `pool` bins along
/// frequency. Trailing bins that do not fill a window are dropped. Returns
/// the pooled map and, per output cell, the winning source frequency (ties go
/// to the lowest bin).
pub(crate) fn relu_pool<T: Real>(
    pre: &[T],
    channels: usize,
    freq: usize,
    time: usize,
    pool: usize,
) -> (Vec<T>, Vec<u32>) {
    let out_f = freq / pool;
    let mut out = vec![T::zero(); channels * out_f * time];
    let mut arg = vec![0u32; channels * out_f * time];
    for c in 0..channels {
        for of in 0..out_f {
            let dst = (c * out_f + of) * time;
            let first = (c * freq + of * pool) * time;
            for t in 0..time {
                let mut best = pre[first + t].max(T::zero());
                let mut best_f = of * pool;
                for q in 1..pool {
                    let v = pre[first + q * time + t].max(T::zero());
                    if v > best {
                        best = v;
                        best_f = of * pool + q;
                    }
                }
                out[dst + t] = best;
                arg[dst + t] = best_f as u32;
            }
        }
    }
    (out, arg)
}

/// Route pooled gradients back through max pooling and ReLU.
pub(crate) fn relu_pool_backward(
    d_pooled: &[f64],
    pre: &[f64],
    arg: &[u32],
    channels: usize,
    freq: usize,
    time: usize,
    pool: usize,
) -> Vec<f64> {
    let out_f = freq / pool;
    let mut d_pre = vec![0.0; channels * freq * time];
    for c in 0..channels {
        for of in 0..out_f {
            let base = (c * out_f + of) * time;
            for t in 0..time {
                let src = (c * freq + arg[base + t] as usize) * time + t;
                if pre[src] > 0.0 {
                    d_pre[src] += d_pooled[base + t];
                }
            }
        }
    }
    d_pre
}

/// Kernel, bias and (optionally) input gradients of one conv layer.
pub(crate) fn conv_backward(
    input: &[f64],
    s: ConvShape,
    kernel: &[f64],
    d_pre: &[f64],
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let plane = s.plane();
    let mut cols = Vec::new();
    im2col(input, s, &mut cols);
    let mut d_kernel = vec![0.0; s.c_out * s.patch()];
    gemm(
        1.0,
        View::row_major(d_pre, s.c_out, plane),
        View::row_major(&cols, s.patch(), plane).t(),
        0.0,
        &mut d_kernel,
    );
    let d_bias = (0..s.c_out)
        .map(|co| d_pre[co * plane..(co + 1) * plane].iter().sum())
        .collect();
    let d_input = need_input_grad.then(|| {
        // Reuse the patch buffer for the patch gradients.
        gemm(
            1.0,
            View::row_major(kernel, s.c_out, s.patch()).t(),
            View::row_major(d_pre, s.c_out, plane),
            0.0,
            &mut cols,
        );
        let mut d_in = vec![0.0; s.c_in * plane];
        col2im(&cols, s, &mut d_in);
        d_in
    });
    (d_kernel, d_bias, d_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct quadruple loop with explicit zero padding.
    fn naive_conv(input: &[f64], s: ConvShape, kernel: &[f64], bias: &[f64]) -> Vec<f64> {
        let (pf, pt) = ((s.kf / 2) as isize, (s.kt / 2) as isize);
        let mut out = vec![0.0; s.c_out * s.plane()];
        for co in 0..s.c_out {
            for f in 0..s.freq {
                for t in 0..s.time {
                    let mut acc = bias[co];
                    for ci in 0..s.c_in {
                        for i in 0..s.kf {
                            for j in 0..s.kt {
                                let sf = f as isize + i as isize - pf;
                                let st = t as isize + j as isize - pt;
                                if sf < 0 || st < 0 || sf >= s.freq as isize || st >= s.time as isize {
                                    continue;
                                }
                                acc += kernel[((co * s.c_in + ci) * s.kf + i) * s.kt + j]
                                    * input[(ci * s.freq + sf as usize) * s.time + st as usize];
                            }
                        }
                    }
                    out[(co * s.freq + f) * s.time + t] = acc;
                }
            }
        }
        out
    }

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut x = seed;
        (0..n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn matches_naive_convolution() {
        for (kf, kt) in [(3, 3), (1, 3), (5, 1), (3, 5)] {
            let s = ConvShape { c_in: 2, c_out: 3, freq: 8, time: 12, kf, kt };
            let input = lcg(s.c_in * s.plane(), 1);
            let kernel = lcg(s.c_out * s.patch(), 2);
            let bias = lcg(s.c_out, 3);
            let got = conv_forward(&input, s, &kernel, &bias, &mut Vec::new());
            let want = naive_conv(&input, s, &kernel, &bias);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let s = ConvShape { c_in: 2, c_out: 1, freq: 5, time: 7, kf: 3, kt: 3 };
        let x = lcg(s.c_in * s.plane(), 4);
        let y = lcg(s.patch() * s.plane(), 5);
        let mut cols = Vec::new();
        im2col(&x, s, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, s, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pooling_drops_remainder_and_breaks_ties_low() {
        // one channel, freq 7, time 1 -> two pooled bins, bin 6 dropped
        let pre = [1.0, 3.0, 3.0, -1.0, -2.0, -5.0, 9.0];
        let (out, arg) = relu_pool(&pre, 1, 7, 1, 3);
        assert_eq!(out, vec![3.0, 0.0]);
        assert_eq!(arg, vec![1, 3]);
        let d = relu_pool_backward(&[1.0, 1.0], &pre, &arg, 1, 7, 1, 3);
        assert_eq!(d, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}

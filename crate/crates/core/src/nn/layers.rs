//! Forward and backward kernels on channel-major (`C x H x W`) buffers.

use super::real::{gemm, Real};
use super::NetError;

/// Unfolds a `c x h x w` input into a `(c*k*k) x (h*w)` patch matrix for a
/// stride-1 `k x k` convolution with `k/2` zero padding.
pub fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    if k == 1 {
        return input[..c * hw].to_vec();
    }
    let pad = (k / 2) as isize;
    let mut col = vec![T::zero(); c * k * k * hw];
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let yy = y as isize + ky as isize - pad;
                    if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let src_row = &plane[yy as usize * w..(yy as usize + 1) * w];
                    let s = (x_lo as isize + dx) as usize;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&src_row[s..s + (x_hi - x_lo)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the input grid.
pub fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let hw = h * w;
    if k == 1 {
        return col[..c * hw].to_vec();
    }
    let pad = (k / 2) as isize;
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let yy = y as isize + ky as isize - pad;
                    if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let s = (x_lo as isize + dx) as usize;
                    let dst_row = &mut plane[yy as usize * w + s..yy as usize * w + s + (x_hi - x_lo)];
                    for (d, v) in dst_row.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d = *d + *v;
                    }
                }
            }
        }
    }
    out
}

/// `out = weight * col + bias`, weight `c_out x (c_in*k*k)`, output `c_out x hw`.
pub fn conv_forward<T: Real>(weight: &[T], bias: &[T], col: &[T], c_out: usize, kdim: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c_out * hw];
    for (o, b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = *b);
    }
    gemm(false, false, c_out, hw, kdim, T::one(), weight, col, T::one(), &mut out);
    out
}

/// Accumulates weight and bias gradients; returns the patch-matrix gradient
/// when `need_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    d_out: &[T],
    col: &[T],
    weight: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    c_out: usize,
    kdim: usize,
    hw: usize,
    need_input: bool,
) -> Option<Vec<T>> {
    gemm(false, true, c_out, kdim, hw, T::one(), d_out, col, T::one(), d_weight);
    for (o, db) in d_bias.iter_mut().enumerate() {
        *db = *db + d_out[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
    }
    need_input.then(|| {
        let mut d_col = vec![T::zero(); kdim * hw];
        gemm(true, false, kdim, hw, c_out, T::one(), weight, d_out, T::zero(), &mut d_col);
        d_col
    })
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` by `activation > 0`, where `activation` is the ReLU output.
pub fn relu_backward_inplace<T: Real>(grad: &mut [T], activation: &[T]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 stride-2 max pooling. `h` and `w` must be even. Returns the pooled
/// map and, per output, the flat input index of its maximum (first wins ties).
pub fn maxpool2_forward<T: Real>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best_i = base + 2 * y * w + 2 * x;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                out.push(best);
                idx.push(best_i as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward<T: Real>(d_out: &[T], idx: &[u32], input_len: usize) -> Vec<T> {
    let mut d_in = vec![T::zero(); input_len];
    for (g, &i) in d_out.iter().zip(idx) {
        d_in[i as usize] = d_in[i as usize] + *g;
    }
    d_in
}

/// Fully connected layer on a batch: `y = x * weight^T + bias`,
/// `x` is `n x d_in`, weight `d_out x d_in`.
pub fn linear_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], n: usize, d_in: usize, d_out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    gemm(false, true, n, d_out, d_in, T::one(), x, weight, T::one(), &mut y);
    y
}

/// Accumulates parameter gradients and returns `dL/dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    d_y: &[T],
    x: &[T],
    weight: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    n: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    gemm(true, false, d_out, d_in, n, T::one(), d_y, x, T::one(), d_weight);
    for row in d_y.chunks_exact(d_out) {
        for (db, g) in d_bias.iter_mut().zip(row) {
            *db = *db + *g;
        }
    }
    let mut d_x = vec![T::zero(); n * d_in];
    gemm(false, false, n, d_in, d_out, T::one(), d_y, weight, T::zero(), &mut d_x);
    d_x
}

/// Sentinel for an empty pooling bin.
pub const EMPTY_BIN: u32 = u32::MAX;

/// Max-pools the feature-space region `(x1, y1, x2, y2)` into a `grid x grid`
/// patch per channel. Bin `j` spans `[x1 + j*bw, x1 + (j+1)*bw]` and covers
/// cells `floor(lo)..ceil(hi)` clamped to the map; empty bins yield 0.
/// Output layout is `c x grid x grid`; the second result holds the flat
/// argmax index into `features` per output (or [`EMPTY_BIN`]).
pub fn roi_pool_forward<T: Real>(
    features: &[T],
    c: usize,
    h: usize,
    w: usize,
    region: [f64; 4],
    grid: usize,
) -> Result<(Vec<T>, Vec<u32>), NetError> {
    let [x1, y1, x2, y2] = region;
    if !(x2 > x1 && y2 > y1) || grid == 0 {
        return Err(NetError::Shape(format!(
            "roi pooling needs a positive-area region and grid >= 1 (region {region:?}, grid {grid})"
        )));
    }
    let bw = (x2 - x1) / grid as f64;
    let bh = (y2 - y1) / grid as f64;
    let span = |lo: f64, hi: f64, limit: usize| {
        let s = (lo.floor().max(0.0) as usize).min(limit);
        let e = (hi.ceil().max(0.0) as usize).min(limit);
        (s, e)
    };
    let mut out = vec![T::zero(); c * grid * grid];
    let mut idx = vec![EMPTY_BIN; c * grid * grid];
    for by in 0..grid {
        let (ys, ye) = span(y1 + by as f64 * bh, y1 + (by + 1) as f64 * bh, h);
        for bx in 0..grid {
            let (xs, xe) = span(x1 + bx as f64 * bw, x1 + (bx + 1) as f64 * bw, w);
            if ys >= ye || xs >= xe {
                continue;
            }
            for ci in 0..c {
                let mut best = T::neg_infinity();
                let mut best_i = EMPTY_BIN;
                for y in ys..ye {
                    for x in xs..xe {
                        let i = ci * h * w + y * w + x;
                        if features[i] > best {
                            best = features[i];
                            best_i = i as u32;
                        }
                    }
                }
                let o = ci * grid * grid + by * grid + bx;
                out[o] = best;
                idx[o] = best_i;
            }
        }
    }
    Ok((out, idx))
}

/// Routes pooled gradients back to the argmax cells only.
pub fn roi_pool_backward<T: Real>(d_out: &[T], idx: &[u32], d_features: &mut [T]) {
    for (g, &i) in d_out.iter().zip(idx) {
        if i != EMPTY_BIN {
            d_features[i as usize] = d_features[i as usize] + *g;
        }
    }
}

//! Raw NCHW kernels shared by the graph ops.
//!
//! Convolution and its transpose are expressed through three loops:
//! `gather` (correlation), `scatter` (its adjoint) and `weight_grad`.
//! Each output plane is produced by one task with a fixed reduction order.

use super::par::for_each_chunk;
use super::Element;

/// Geometry of a strided, zero-padded sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Indices `i` in `0..count` with `0 <= i*stride + k - pad < limit`.
#[inline]
fn tap_range(count: usize, stride: usize, k: usize, pad: usize, limit: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if limit + pad > k {
        (limit + pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = hi.min(count);
    (lo.min(hi), hi)
}

/// Rows of a GEMM output handled by one task. Fixed, so the partition (and
/// therefore every rounding) is the same with or without `parallel`.
const ROW_BLOCK: usize = 8;

/// Unfolds sliding windows of `big` (`b` planes of `bh x bw`) into columns:
/// `col[(bi*kh+ki)*kw+kj, y*sw+x] = big[bi, y*s+ki-p, x*s+kj-p]` (0 outside).
fn im2col<T: Element>(big: &[T], b: usize, (bh, bw): (usize, usize), win: Window, (sh, sw): (usize, usize)) -> Vec<T> {
    let Window { kh, kw, stride, pad } = win;
    let mut col = vec![T::zero(); b * kh * kw * sh * sw];
    for_each_chunk(&mut col, kh * kw * sh * sw, |bi, rows| {
        let plane = &big[bi * bh * bw..][..bh * bw];
        for ki in 0..kh {
            let (y_lo, y_hi) = tap_range(sh, stride, ki, pad, bh);
            for kj in 0..kw {
                let (x_lo, x_hi) = tap_range(sw, stride, kj, pad, bw);
                let row = &mut rows[(ki * kw + kj) * sh * sw..][..sh * sw];
                for y in y_lo..y_hi {
                    let src = &plane[(y * stride + ki - pad) * bw..][..bw];
                    let dst = &mut row[y * sw..][..sw];
                    if stride == 1 {
                        let start = x_lo + kj - pad;
                        dst[x_lo..x_hi].copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                    } else {
                        for x in x_lo..x_hi {
                            dst[x] = src[x * stride + kj - pad];
                        }
                    }
                }
            }
        }
    });
    col
}

/// Adjoint of [`im2col`]: folds columns back onto `b` planes, summing overlaps.
fn col2im<T: Element>(col: &[T], b: usize, (bh, bw): (usize, usize), win: Window, (sh, sw): (usize, usize), out: &mut [T]) {
    let Window { kh, kw, stride, pad } = win;
    for_each_chunk(&mut out[..b * bh * bw], bh * bw, |bi, plane| {
        let rows = &col[bi * kh * kw * sh * sw..][..kh * kw * sh * sw];
        for ki in 0..kh {
            let (y_lo, y_hi) = tap_range(sh, stride, ki, pad, bh);
            for kj in 0..kw {
                let (x_lo, x_hi) = tap_range(sw, stride, kj, pad, bw);
                let row = &rows[(ki * kw + kj) * sh * sw..][..sh * sw];
                for y in y_lo..y_hi {
                    let dst = &mut plane[(y * stride + ki - pad) * bw..][..bw];
                    let src = &row[y * sw..][..sw];
                    if stride == 1 {
                        let start = x_lo + kj - pad;
                        for (d, &s) in dst[start..start + (x_hi - x_lo)].iter_mut().zip(&src[x_lo..x_hi]) {
                            *d = *d + s;
                        }
                    } else {
                        for x in x_lo..x_hi {
                            let i = x * stride + kj - pad;
                            dst[i] = dst[i] + src[x];
                        }
                    }
                }
            }
        }
    });
}

/// Row-major matrix view with explicit strides.
#[derive(Clone, Copy)]
struct Mat<'a, T> {
    data: &'a [T],
    rs: usize,
    cs: usize,
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, split into fixed row blocks.
fn gemm_rows<T: Element>(m: usize, k: usize, n: usize, a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    for_each_chunk(&mut c[..m * n], ROW_BLOCK * n, |blk, rows| {
        let r0 = blk * ROW_BLOCK;
        let mr = rows.len() / n.max(1);
        T::gemm(mr, k, n, &a.data[r0 * a.rs..], (a.rs, a.cs), b.data, (b.rs, b.cs), beta, rows, (n, 1));
    });
}

/// `out[n,a,oy,ox] = bias[a] + sum_{b,ki,kj} w[a,b,ki,kj] * src[n,b,oy*s+ki-p,ox*s+kj-p]`
#[allow(clippy::too_many_arguments)]
pub(crate) fn gather<T: Element>(
    src: &[T],
    (n, b, h, w): (usize, usize, usize, usize),
    weights: &[T],
    a: usize,
    bias: Option<&[T]>,
    win: Window,
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let kk = b * win.kh * win.kw;
    let ohw = oh * ow;
    let mut out = vec![T::zero(); n * a * ohw];
    for ni in 0..n {
        let col = im2col(&src[ni * b * h * w..][..b * h * w], b, (h, w), win, (oh, ow));
        let dst = &mut out[ni * a * ohw..][..a * ohw];
        let wm = Mat { data: weights, rs: kk, cs: 1 };
        let cm = Mat { data: &col, rs: ohw, cs: 1 };
        gemm_rows(a, kk, ohw, wm, cm, T::zero(), dst);
        if let Some(bias) = bias {
            for (plane, &bv) in dst.chunks_mut(ohw).zip(bias) {
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

/// `out[n,b,y*s+ki-p,x*s+kj-p] += w[a,b,ki,kj] * src[n,a,y,x]`, plus `bias[b]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scatter<T: Element>(
    src: &[T],
    (n, a, h, w): (usize, usize, usize, usize),
    weights: &[T],
    b: usize,
    bias: Option<&[T]>,
    win: Window,
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let kk = b * win.kh * win.kw;
    let hw = h * w;
    let mut out = vec![T::zero(); n * b * oh * ow];
    let mut cols = vec![T::zero(); kk * hw];
    for ni in 0..n {
        // cols = W^T [kk x a] * src[n] [a x hw]
        let wt = Mat { data: weights, rs: 1, cs: kk };
        let sm = Mat { data: &src[ni * a * hw..][..a * hw], rs: hw, cs: 1 };
        gemm_rows(kk, a, hw, wt, sm, T::zero(), &mut cols);
        let dst = &mut out[ni * b * oh * ow..][..b * oh * ow];
        col2im(&cols, b, (oh, ow), win, (h, w), dst);
        if let Some(bias) = bias {
            for (plane, &bv) in dst.chunks_mut(oh * ow).zip(bias) {
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

/// `dw[a,b,ki,kj] = sum_{n,y,x} small[n,a,y,x] * big[n,b,y*s+ki-p,x*s+kj-p]`
pub(crate) fn weight_grad<T: Element>(
    small: &[T],
    (n, a, sh, sw): (usize, usize, usize, usize),
    big: &[T],
    (b, bh, bw): (usize, usize, usize),
    win: Window,
) -> Vec<T> {
    let kk = b * win.kh * win.kw;
    let shw = sh * sw;
    let mut out = vec![T::zero(); a * kk];
    for ni in 0..n {
        let col = im2col(&big[ni * b * bh * bw..][..b * bh * bw], b, (bh, bw), win, (sh, sw));
        // dW [a x kk] += small[n] [a x shw] * col^T [shw x kk]
        let sm = Mat { data: &small[ni * a * shw..][..a * shw], rs: shw, cs: 1 };
        let ct = Mat { data: &col, rs: 1, cs: shw };
        let beta = if ni == 0 { T::zero() } else { T::one() };
        gemm_rows(a, shw, kk, sm, ct, beta, &mut out);
    }
    out
}

/// Per-channel sums over batch and space, for bias gradients.
pub(crate) fn channel_sums<T: Element>(g: &[T], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for ni in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            let plane = &g[(ni * c + ci) * h * w..][..h * w];
            *o = plane.iter().fold(*o, |acc, &v| acc + v);
        }
    }
    out
}

/// One axis of a bilinear resampling: source taps and the weight of the upper tap.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel (align-corners-false) sample positions, clamped at the edges.
pub(crate) fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Source index for nearest-neighbour sampling of output index `i`.
#[inline]
pub(crate) fn nearest_index(i: usize, in_len: usize, out_len: usize) -> usize {
    let src = ((i as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize;
    src.min(in_len - 1)
}

/// Bilinear resize of a batch of planes `[planes, h, w] -> [planes, oh, ow]`.
pub(crate) fn bilinear_forward<T: Element>(
    src: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for_each_chunk(&mut out, oh * ow, |p, plane| {
        let s = &src[p * h * w..][..h * w];
        for (oy, t) in ty.iter().enumerate() {
            let fy = T::lit(t.frac);
            let gy = T::one() - fy;
            let r0 = &s[t.lo * w..][..w];
            let r1 = &s[t.hi * w..][..w];
            for (ox, u) in tx.iter().enumerate() {
                let fx = T::lit(u.frac);
                let gx = T::one() - fx;
                let top = gx * r0[u.lo] + fx * r0[u.hi];
                let bot = gx * r1[u.lo] + fx * r1[u.hi];
                plane[oy * ow + ox] = gy * top + fy * bot;
            }
        }
    });
    out
}

/// Adjoint of [`bilinear_forward`].
pub(crate) fn bilinear_backward<T: Element>(
    grad_out: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![T::zero(); planes * h * w];
    for_each_chunk(&mut out, h * w, |p, plane| {
        let g = &grad_out[p * oh * ow..][..oh * ow];
        for (oy, t) in ty.iter().enumerate() {
            let fy = T::lit(t.frac);
            let gy = T::one() - fy;
            for (ox, u) in tx.iter().enumerate() {
                let fx = T::lit(u.frac);
                let gx = T::one() - fx;
                let v = g[oy * ow + ox];
                plane[t.lo * w + u.lo] = plane[t.lo * w + u.lo] + gy * gx * v;
                plane[t.lo * w + u.hi] = plane[t.lo * w + u.hi] + gy * fx * v;
                plane[t.hi * w + u.lo] = plane[t.hi * w + u.lo] + fy * gx * v;
                plane[t.hi * w + u.hi] = plane[t.hi * w + u.hi] + fy * fx * v;
            }
        }
    });
    out
}

/// Bilinear resize of a single `h x w` plane, outside any graph.
pub fn bilinear_resize_plane(src: &[f32], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f32> {
    debug_assert_eq!(src.len(), h * w);
    bilinear_forward(src, 1, (h, w), (oh, ow))
}

/// Nearest-neighbour resize of a single plane; used for categorical maps.
pub fn nearest_resize_plane<V: Copy>(src: &[V], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<V> {
    debug_assert_eq!(src.len(), h * w);
    let xs: Vec<usize> = (0..ow).map(|x| nearest_index(x, w, ow)).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = nearest_index(y, h, oh);
        out.extend(xs.iter().map(|&sx| src[sy * w + sx]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_range_matches_bruteforce() {
        for count in 1..8 {
            for stride in 1..4 {
                for k in 0..5 {
                    for pad in 0..4 {
                        for limit in 1..10 {
                            let want: Vec<usize> = (0..count)
                                .filter(|&i| {
                                    let p = (i * stride + k) as isize - pad as isize;
                                    p >= 0 && p < limit as isize
                                })
                                .collect();
                            let (lo, hi) = tap_range(count, stride, k, pad, limit);
                            assert_eq!((lo..hi).collect::<Vec<_>>(), want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bilinear_identity_is_exact() {
        let src: Vec<f32> = (0..12).map(|v| v as f32 * 0.37).collect();
        assert_eq!(bilinear_resize_plane(&src, (3, 4), (3, 4)), src);
    }

    #[test]
    fn bilinear_preserves_constants() {
        let src = vec![0.625f32; 35];
        for v in bilinear_resize_plane(&src, (5, 7), (11, 3)) {
            assert_eq!(v, 0.625);
        }
    }

    #[test]
    fn nearest_upsample_then_downsample_is_identity() {
        let src: Vec<u8> = (0..60).map(|v| (v % 3) as u8).collect();
        let up = nearest_resize_plane(&src, (6, 10), (13, 17));
        assert_eq!(nearest_resize_plane(&up, (13, 17), (6, 10)), src);
    }
}

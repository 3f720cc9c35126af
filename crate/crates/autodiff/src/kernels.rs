//! Dense numeric routines backing graph operations.
//!
//! Everything here is single threaded and allocation-honest: each routine
//! returns a freshly computed buffer, and the only scratch space is the
//! im2col buffer inside the convolution. Determinism of the whole engine
//! reduces to determinism of these loops plus the GEMM backend, which runs
//! unthreaded.

use crate::real::Real;

/// `C = A * B` for row-major `A: m x k`, `B: k x n`.
pub fn matmul<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if m * k * n > 0 {
        T::gemm(m, k, n, T::one(), a, b, T::zero(), &mut c);
    }
    c
}

pub fn transpose2<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Swaps the first two axes of a rank-4 view `(a, b, inner)` where `inner`
/// is the product of the trailing extents.
pub fn swap01<T: Real>(x: &[T], a: usize, b: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * inner;
            let dst = (j * a + i) * inner;
            out[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
        }
    }
    out
}

/// Reverses the last axis of each `(.., w)` row.
pub fn flip_w<T: Real>(x: &[T], w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(w) {
        out.extend(row.iter().rev().copied());
    }
    out
}

/// Reverses both spatial axes of each `(h, w)` plane (180 degree rotation).
pub fn flip_hw<T: Real>(x: &[T], h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut out = Vec::with_capacity(x.len());
    for p in x.chunks_exact(plane) {
        out.extend(p.iter().rev().copied());
    }
    out
}

/// Integer shift with zero fill: `out[y][x] = in[y + dy][x + dx]`.
pub fn translate2<T: Real>(x: &[T], planes: usize, h: usize, w: usize, dy: i64, dx: i64) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h as i64 {
            let sy = y + dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            let x_lo = (-dx).clamp(0, w as i64) as usize;
            let x_hi = (w as i64 - dx).clamp(x_lo as i64, w as i64) as usize;
            if x_hi > x_lo {
                let d = y as usize * w;
                let s = sy as usize * w + (x_lo as i64 + dx) as usize;
                dst[d + x_lo..d + x_hi].copy_from_slice(&src[s..s + (x_hi - x_lo)]);
            }
        }
    }
    out
}

/// Inserts `stride - 1` zeros between neighbouring elements of each plane.
/// `(h, w)` becomes `((h-1)*stride + 1, (w-1)*stride + 1)`.
pub fn dilate2<T: Real>(x: &[T], planes: usize, h: usize, w: usize, stride: usize) -> Vec<T> {
    let hd = (h - 1) * stride + 1;
    let wd = (w - 1) * stride + 1;
    let mut out = vec![T::zero(); planes * hd * wd];
    for p in 0..planes {
        for y in 0..h {
            for xx in 0..w {
                out[(p * hd + y * stride) * wd + xx * stride] = x[(p * h + y) * w + xx];
            }
        }
    }
    out
}

/// Adjoint of [`dilate2`]: keeps every `stride`-th sample of each plane.
pub fn undilate2<T: Real>(x: &[T], planes: usize, hd: usize, wd: usize, stride: usize) -> Vec<T> {
    let h = (hd - 1) / stride + 1;
    let w = (wd - 1) / stride + 1;
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for xx in 0..w {
                out[(p * h + y) * w + xx] = x[(p * hd + y * stride) * wd + xx * stride];
            }
        }
    }
    out
}

fn im2col<T: Real>(
    img: &[T],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let mut r = 0usize;
    for c in 0..ci {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[r * ho * wo..(r + 1) * ho * wo];
                let mut o = 0usize;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as i64 - pad as i64;
                    if iy < 0 || iy >= h as i64 {
                        row[o..o + wo].fill(T::zero());
                        o += wo;
                        continue;
                    }
                    let base = iy as usize * w;
                    if stride == 1 {
                        let shift = kx as i64 - pad as i64;
                        let lo = (-shift).clamp(0, wo as i64) as usize;
                        let hi = (w as i64 - shift).clamp(lo as i64, wo as i64) as usize;
                        row[o..o + lo].fill(T::zero());
                        if hi > lo {
                            let s = base + (lo as i64 + shift) as usize;
                            row[o + lo..o + hi].copy_from_slice(&plane[s..s + (hi - lo)]);
                        }
                        row[o + hi..o + wo].fill(T::zero());
                        o += wo;
                    } else {
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as i64 - pad as i64;
                            row[o] = if ix < 0 || ix >= w as i64 {
                                T::zero()
                            } else {
                                plane[base + ix as usize]
                            };
                            o += 1;
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

/// Cross-correlation of `x: (n, ci, h, w)` with `wt: (co, ci, kh, kw)`,
/// zero padding `pad` on every side. Output is `(n, co, ho, wo)` where
/// `ho = (h + 2*pad - kh) / stride + 1` (exact division is the caller's
/// contract). Implemented as per-image im2col plus GEMM.
#[allow(clippy::too_many_arguments)]
pub fn conv2d<T: Real>(
    x: &[T],
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    wt: &[T],
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let kdim = ci * kh * kw;
    let odim = ho * wo;
    let mut col = vec![T::zero(); kdim * odim];
    let mut out = vec![T::zero(); n * co * odim];
    for i in 0..n {
        let img = &x[i * ci * h * w..(i + 1) * ci * h * w];
        im2col(img, ci, h, w, kh, kw, stride, pad, ho, wo, &mut col);
        let dst = &mut out[i * co * odim..(i + 1) * co * odim];
        if co * kdim * odim > 0 {
            T::gemm(co, kdim, odim, T::one(), wt, &col, T::zero(), dst);
        }
    }
    out
}

/// Mean over `k x k` windows at the given stride, windows fully inside the
/// plane (rows and columns past the last full window are dropped).
#[allow(clippy::too_many_arguments)]
pub fn avg_pool<T: Real>(x: &[T], planes: usize, h: usize, w: usize, k: usize, stride: usize, ho: usize, wo: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = T::zero();
                for ky in 0..k {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        s += src[row + kx];
                    }
                }
                out[(p * ho + oy) * wo + ox] = s * inv;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool`]: spreads each pooled value back over its window
/// with weight `1/k^2`.
#[allow(clippy::too_many_arguments)]
pub fn avg_unpool<T: Real>(g: &[T], planes: usize, ho: usize, wo: usize, k: usize, stride: usize, h: usize, w: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let v = g[(p * ho + oy) * wo + ox] * inv;
                for ky in 0..k {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        dst[row + kx] += v;
                    }
                }
            }
        }
    }
    out
}

/// Max over `k x k` windows. Returns the pooled values and, per output
/// element, the flat `(y * w + x)` plane index of the winning input. Ties
/// resolve to the first maximum in row-major window order.
#[allow(clippy::too_many_arguments)]
pub fn max_pool<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> (Vec<T>, Vec<u32>) {
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut idx = vec![0u32; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_at = 0u32;
                for ky in 0..k {
                    let y = oy * stride + ky;
                    for kx in 0..k {
                        let xx = ox * stride + kx;
                        let v = src[y * w + xx];
                        if v > best {
                            best = v;
                            best_at = (y * w + xx) as u32;
                        }
                    }
                }
                out[(p * ho + oy) * wo + ox] = best;
                idx[(p * ho + oy) * wo + ox] = best_at;
            }
        }
    }
    (out, idx)
}

/// Scatters `g` into zero planes of extent `(h, w)` at the stored argmax
/// positions, accumulating where windows overlap.
pub fn pool_scatter<T: Real>(g: &[T], idx: &[u32], planes: usize, per_plane: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        let base = p * per_plane;
        for e in 0..per_plane {
            dst[idx[base + e] as usize] += g[base + e];
        }
    }
    out
}

/// Gathers plane values at the stored argmax positions (adjoint of
/// [`pool_scatter`] with respect to the scattered values).
pub fn pool_gather<T: Real>(x: &[T], idx: &[u32], planes: usize, per_plane: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); planes * per_plane];
    for p in 0..planes {
        let src = &x[p * plane..(p + 1) * plane];
        let base = p * per_plane;
        for e in 0..per_plane {
            out[base + e] = src[idx[base + e] as usize];
        }
    }
    out
}

#[inline]
fn corner_weights<T: Real>(sy: T, sx: T) -> ([i64; 2], [i64; 2], [[T; 2]; 2]) {
    let fy = sy.floor();
    let fx = sx.floor();
    let y0 = fy.to_f64().clamp(-(1i64 << 40) as f64, (1i64 << 40) as f64) as i64;
    let x0 = fx.to_f64().clamp(-(1i64 << 40) as f64, (1i64 << 40) as f64) as i64;
    let ty = sy - fy;
    let tx = sx - fx;
    let one = T::one();
    let wy = [one - ty, ty];
    let wx = [one - tx, tx];
    (
        [y0, y0 + 1],
        [x0, x0 + 1],
        [[wy[0] * wx[0], wy[0] * wx[1]], [wy[1] * wx[0], wy[1] * wx[1]]],
    )
}

/// Bilinear sampling of `x: (n, c, h, w)` at source pixel coordinates
/// `grid: (n, ho, wo, 2)` stored as `(y, x)` pairs. Out-of-bounds corners
/// contribute zero.
#[allow(clippy::too_many_arguments)]
pub fn grid_sample<T: Real>(x: &[T], n: usize, c: usize, h: usize, w: usize, grid: &[T], ho: usize, wo: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * ho * wo];
    for i in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = (i * ho + oy) * wo + ox;
                let (ys, xs, wts) = corner_weights(grid[2 * g], grid[2 * g + 1]);
                for ch in 0..c {
                    let src = &x[(i * c + ch) * h * w..(i * c + ch + 1) * h * w];
                    let mut acc = T::zero();
                    for (ai, &y) in ys.iter().enumerate() {
                        if y < 0 || y >= h as i64 {
                            continue;
                        }
                        for (bi, &xx) in xs.iter().enumerate() {
                            if xx < 0 || xx >= w as i64 {
                                continue;
                            }
                            acc += wts[ai][bi] * src[y as usize * w + xx as usize];
                        }
                    }
                    out[((i * c + ch) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Adjoint of [`grid_sample`] with respect to the sampled image: deposits
/// each output gradient onto the four source corners with bilinear weights.
#[allow(clippy::too_many_arguments)]
pub fn grid_scatter<T: Real>(g: &[T], n: usize, c: usize, ho: usize, wo: usize, grid: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * h * w];
    for i in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let gi = (i * ho + oy) * wo + ox;
                let (ys, xs, wts) = corner_weights(grid[2 * gi], grid[2 * gi + 1]);
                for ch in 0..c {
                    let v = g[((i * c + ch) * ho + oy) * wo + ox];
                    let dst = &mut out[(i * c + ch) * h * w..(i * c + ch + 1) * h * w];
                    for (ai, &y) in ys.iter().enumerate() {
                        if y < 0 || y >= h as i64 {
                            continue;
                        }
                        for (bi, &xx) in xs.iter().enumerate() {
                            if xx < 0 || xx >= w as i64 {
                                continue;
                            }
                            dst[y as usize * w + xx as usize] += wts[ai][bi] * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Sum reduction over the padded rank-4 axes selected by `mask` (bit `i`
/// set means axis `i` collapses to extent 1). Output layout keeps reduced
/// axes at extent 1.
pub fn reduce_sum<T: Real>(src: &[T], dims: [usize; 4], mask: u8) -> Vec<T> {
    let od = [
        if mask & 1 != 0 { 1 } else { dims[0] },
        if mask & 2 != 0 { 1 } else { dims[1] },
        if mask & 4 != 0 { 1 } else { dims[2] },
        if mask & 8 != 0 { 1 } else { dims[3] },
    ];
    let os = [od[1] * od[2] * od[3], od[2] * od[3], od[3], 1usize];
    let keep = |axis: usize| -> usize {
        if mask & (1 << axis) != 0 {
            0
        } else {
            os[axis]
        }
    };
    let (s0, s1, s2, s3) = (keep(0), keep(1), keep(2), keep(3));
    let mut out = vec![T::zero(); od.iter().product()];
    let mut i = 0usize;
    for a in 0..dims[0] {
        let b0 = a * s0;
        for b in 0..dims[1] {
            let b1 = b0 + b * s1;
            for c in 0..dims[2] {
                let b2 = b1 + c * s2;
                for d in 0..dims[3] {
                    out[b2 + d * s3] += src[i];
                    i += 1;
                }
            }
        }
    }
    out
}

/// Expands extent-1 axes of `src` to the target padded dims (each source
/// axis must equal the target or be 1).
pub fn broadcast_to<T: Real>(src: &[T], sdims: [usize; 4], ddims: [usize; 4]) -> Vec<T> {
    let ss = [sdims[1] * sdims[2] * sdims[3], sdims[2] * sdims[3], sdims[3], 1usize];
    let stride = |axis: usize| -> usize {
        if sdims[axis] == 1 {
            0
        } else {
            ss[axis]
        }
    };
    let (s0, s1, s2, s3) = (stride(0), stride(1), stride(2), stride(3));
    let mut out = Vec::with_capacity(ddims.iter().product());
    for a in 0..ddims[0] {
        let b0 = a * s0;
        for b in 0..ddims[1] {
            let b1 = b0 + b * s1;
            for c in 0..ddims[2] {
                let b2 = b1 + c * s2;
                if s3 == 1 {
                    out.extend_from_slice(&src[b2..b2 + ddims[3]]);
                } else {
                    let v = src[b2];
                    out.extend(std::iter::repeat(v).take(ddims[3]));
                }
            }
        }
    }
    out
}

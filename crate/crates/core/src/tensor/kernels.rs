//! Forward and backward kernels. These work on raw slices; shape checking
//! happens in the graph layer.

use super::{Element, Shape};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn cols_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn cols_len(&self) -> usize {
        self.cols_rows() * self.oh * self.ow
    }

    /// 1x1, stride 1, no padding: the input plane already is the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `floor((extent + 2 pad - k) / stride) + 1`, or `None` when the window does not fit.
pub(crate) fn out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    if k == 0 || stride == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output positions `lo..hi` whose input index `o * stride + tap - pad` lies in `0..extent`.
fn valid_range(g: &ConvGeom, tap: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = if g.pad > tap {
        (g.pad - tap).div_ceil(g.stride)
    } else {
        0
    };
    let hi = if extent + g.pad > tap {
        ((extent + g.pad - tap - 1) / g.stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unrolls one batch item (`c_in x h x w`) into a `(c_in k k) x (oh ow)` matrix.
pub(crate) fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.oh * g.ow;
    // Strided rows are split into `stride` phases so every copy below is contiguous:
    // phase `p` of an input row holds columns `p, p + stride, ...`.
    let s = g.stride;
    let pw = g.w.div_ceil(s);
    let phased: Vec<T>;
    let (src_all, row_len) = if s == 1 {
        (x, g.w)
    } else {
        let mut buf = vec![T::zero(); g.c_in * g.h * s * pw];
        for (row, dst) in x.chunks(g.w).zip(buf.chunks_mut(s * pw)) {
            for (p, phase) in dst.chunks_mut(pw).enumerate() {
                for (d, &v) in phase.iter_mut().zip(row.iter().skip(p).step_by(s)) {
                    *d = v;
                }
            }
        }
        phased = buf;
        (&phased[..], s * pw)
    };
    for ci in 0..g.c_in {
        let xin = &src_all[ci * g.h * row_len..(ci + 1) * g.h * row_len];
        for ky in 0..g.k {
            let (ylo, yhi) = valid_range(g, ky, g.h, g.oh);
            for kx in 0..g.k {
                let (xlo, xhi) = valid_range(g, kx, g.w, g.ow);
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                dst[..ylo * g.ow].fill(T::zero());
                dst[yhi * g.ow..].fill(T::zero());
                let start = xlo * s + kx - g.pad.min(xlo * s + kx);
                let off = if s == 1 {
                    start
                } else {
                    (start % s) * pw + start / s
                };
                for oy in ylo..yhi {
                    let iy = oy * s + ky - g.pad;
                    let src = &xin[iy * row_len..(iy + 1) * row_len];
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    drow[..xlo].fill(T::zero());
                    drow[xhi..].fill(T::zero());
                    if xlo < xhi {
                        drow[xlo..xhi].copy_from_slice(&src[off..off + xhi - xlo]);
                    }
                }
            }
        }
    }
}

/// Blocked transpose of a row-major `rows x cols` matrix.
fn transpose<T: Element>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        let r1 = (r0 + B).min(rows);
        for c0 in (0..cols).step_by(B) {
            let c1 = (c0 + B).min(cols);
            for r in r0..r1 {
                let srow = &src[r * cols + c0..r * cols + c1];
                for (i, &v) in srow.iter().enumerate() {
                    dst[(c0 + i) * rows + r] = v;
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into an input-shaped gradient buffer.
pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.oh * g.ow;
    for ci in 0..g.c_in {
        let dxin = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = valid_range(g, ky, g.h, g.oh);
            for kx in 0..g.k {
                let (xlo, xhi) = valid_range(g, kx, g.w, g.ow);
                if xlo >= xhi {
                    continue;
                }
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let drow = &mut dxin[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * g.ow + xlo..oy * g.ow + xhi];
                    let start = xlo * g.stride + kx - g.pad;
                    for (d, &v) in drow[start..].iter_mut().step_by(g.stride).zip(srow) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Row-major `c = a * b (+ c if accumulate)` with `a: m x k`, `b: k x n`.
pub(crate) fn matmul<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the slices cover the strided extents asserted above.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a^T * b (+ c)` with `a: k x m` stored row-major.
pub(crate) fn matmul_at<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: `a` is k x m row-major, read with swapped strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward<T: Element>(
    x: &[T],
    n: usize,
    weight: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    g: &ConvGeom,
) -> Vec<T> {
    let plane = g.oh * g.ow;
    let kdim = g.cols_rows();
    let mut out = vec![T::zero(); n * c_out * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.cols_len()]
    };
    let in_len = g.c_in * g.h * g.w;
    for b in 0..n {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * c_out * plane..(b + 1) * c_out * plane];
        if let Some(bias) = bias {
            for (co, row) in ob.chunks_mut(plane).enumerate() {
                row.fill(bias[co]);
            }
        }
        let src = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        matmul(c_out, kdim, plane, weight, src, ob, bias.is_some());
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    n: usize,
    weight: &[T],
    c_out: usize,
    g: &ConvGeom,
    dout: &[T],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> ConvGrads<T> {
    let plane = g.oh * g.ow;
    let kdim = g.cols_rows();
    let in_len = g.c_in * g.h * g.w;
    let mut dx = want_dx.then(|| vec![T::zero(); n * in_len]);
    let mut dw = want_dw.then(|| vec![T::zero(); c_out * kdim]);
    let db = want_db.then(|| {
        let mut db = vec![T::zero(); c_out];
        for b in 0..n {
            for (co, acc) in db.iter_mut().enumerate() {
                let off = (b * c_out + co) * plane;
                let s = dout[off..off + plane]
                    .iter()
                    .fold(0.0f64, |a, v| a + v.as_f64());
                *acc = *acc + T::from_f64(s);
            }
        }
        db
    });
    let pointwise = g.is_pointwise();
    // The weight gradient is accumulated transposed, `(c_in k k) x c_out`, as
    // columns times the (cheap to transpose) output gradient.
    let mut dw_t = if want_dw {
        vec![T::zero(); kdim * c_out]
    } else {
        Vec::new()
    };
    let mut cols = if want_dw && !pointwise {
        vec![T::zero(); g.cols_len()]
    } else {
        Vec::new()
    };
    let mut gb_t = vec![T::zero(); if want_dw { plane * c_out } else { 0 }];
    let mut dcols = if want_dx && !pointwise {
        vec![T::zero(); g.cols_len()]
    } else {
        Vec::new()
    };
    for b in 0..n {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gb = &dout[b * c_out * plane..(b + 1) * c_out * plane];
        if want_dw {
            transpose(gb, c_out, plane, &mut gb_t);
            let src = if pointwise {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols
            };
            matmul(kdim, plane, c_out, src, &gb_t, &mut dw_t, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if pointwise {
                matmul_at(kdim, c_out, plane, weight, gb, dxb, false);
            } else {
                matmul_at(kdim, c_out, plane, weight, gb, &mut dcols, false);
                col2im(&dcols, g, dxb);
            }
        }
    }
    if let Some(dw) = dw.as_mut() {
        transpose(&dw_t, kdim, c_out, dw);
    }
    ConvGrads { dx, dw, db }
}

/// Max pooling with `-inf` padding. Returns values and the flat input index of
/// each window's first maximum.
pub(crate) fn maxpool_forward<T: Element>(
    x: &[T],
    shape: Shape,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> (Vec<T>, Vec<usize>) {
    let [n, c, h, w] = shape.0;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

/// Source index pair and interpolation weight for one output coordinate.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-centre sampling positions, clamped at the low border.
pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Element>(x: &[T], shape: Shape, th: usize, tw: usize) -> Vec<T> {
    let [n, c, h, w] = shape.0;
    let ys = bilinear_taps(h, th);
    let xs = bilinear_taps(w, tw);
    let mut out = Vec::with_capacity(n * c * th * tw);
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        for ty in &ys {
            let fy = T::from_f64(ty.frac);
            let gy = T::one() - fy;
            let r0 = &src[ty.lo * w..(ty.lo + 1) * w];
            let r1 = &src[ty.hi * w..(ty.hi + 1) * w];
            for tx in &xs {
                let fx = T::from_f64(tx.frac);
                let gx = T::one() - fx;
                let top = r0[tx.lo] * gx + r0[tx.hi] * fx;
                let bot = r1[tx.lo] * gx + r1[tx.hi] * fx;
                out.push(top * gy + bot * fy);
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Element>(
    dout: &[T],
    shape: Shape,
    th: usize,
    tw: usize,
) -> Vec<T> {
    let [n, c, h, w] = shape.0;
    let ys = bilinear_taps(h, th);
    let xs = bilinear_taps(w, tw);
    let mut dx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let g = &dout[p * th * tw..(p + 1) * th * tw];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, ty) in ys.iter().enumerate() {
            let fy = T::from_f64(ty.frac);
            let gy = T::one() - fy;
            for (ox, tx) in xs.iter().enumerate() {
                let fx = T::from_f64(tx.frac);
                let gx = T::one() - fx;
                let v = g[oy * tw + ox];
                d[ty.lo * w + tx.lo] = d[ty.lo * w + tx.lo] + v * gy * gx;
                d[ty.lo * w + tx.hi] = d[ty.lo * w + tx.hi] + v * gy * fx;
                d[ty.hi * w + tx.lo] = d[ty.hi * w + tx.lo] + v * fy * gx;
                d[ty.hi * w + tx.hi] = d[ty.hi * w + tx.hi] + v * fy * fx;
            }
        }
    }
    dx
}

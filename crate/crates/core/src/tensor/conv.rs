//! Convolution and depth-to-space kernels on raw NCHW buffers.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{invalid, Error, Result};
use crate::Real;

/// Output extent of a strided, zero-padded correlation.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(xs: [usize; 4], ws: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, h, w] = xs;
        let [cout, wcin, kh, kw] = ws;
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d (input channels vs weight)",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(invalid!("conv2d kernel must have odd extent, got {kh}x{kw}"));
        }
        let oh = conv_output_size(h, kh, stride, pad).ok_or_else(|| {
            invalid!("conv2d input {h}x{w} too small for kernel {kh}x{kw} (padding {pad}, stride {stride})")
        })?;
        let ow = conv_output_size(w, kw, stride, pad).ok_or_else(|| {
            invalid!("conv2d input {h}x{w} too small for kernel {kh}x{kw} (padding {pad}, stride {stride})")
        })?;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.oh, self.ow]
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output columns `[lo, hi)` that read inside the input for kernel column
/// `kx` at unit stride, and the input offset `ix - ox`.
fn unit_span(g: &ConvGeom, kx: usize) -> (usize, usize, isize) {
    let dx = kx as isize - g.pad as isize;
    let lo = ((-dx).max(0) as usize).min(g.ow);
    let hi = (g.ow as isize).min(g.w as isize - dx).max(lo as isize) as usize;
    (lo, hi, dx)
}

/// Unfolds one sample `[Cin, H, W]` into `[Cin·kh·kw, oh·ow]`, zero outside.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.cin {
        let inp = &x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut col[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.oh {
                    let dst = &mut row[oy * g.ow..][..g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &inp[iy as usize * g.w..][..g.w];
                    if g.stride == 1 {
                        let (lo, hi, dx) = unit_span(g, kx);
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        if hi > lo {
                            let s0 = (lo as isize + dx) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix >= 0 && (ix as usize) < g.w {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds `[Cin·kh·kw, oh·ow]` back, summing overlaps.
fn col2im<T: Real>(g: &ConvGeom, col: &[T], x: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.cin {
        let inp = &mut x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &col[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let dst = &mut inp[iy as usize * g.w..][..g.w];
                    if g.stride == 1 {
                        let (lo, hi, dx) = unit_span(g, kx);
                        let s0 = (lo as isize + dx) as usize;
                        for (d, &v) in dst[s0..s0 + hi - lo]
                            .iter_mut()
                            .zip(&row[oy * g.ow + lo..oy * g.ow + hi])
                        {
                            *d += v;
                        }
                        continue;
                    }
                    for (ox, &v) in row[oy * g.ow..][..g.ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

const NR: usize = 8;

/// `out[i, :] += Σ_j a[i, j] · b[j, :]` with `a` `m×kk` and `b` `kk×p`.
/// Blocks of four output rows by eight pixels stay in registers.
fn gemm_acc<T: Real>(out: &mut [T], a: &[T], b: &[T], m: usize, kk: usize, p: usize) {
    let full = p / NR * NR;
    let mut i = 0;
    while i + 4 <= m {
        let rows = [
            &a[i * kk..][..kk],
            &a[(i + 1) * kk..][..kk],
            &a[(i + 2) * kk..][..kk],
            &a[(i + 3) * kk..][..kk],
        ];
        let mut x = 0;
        while x < full {
            let mut acc = [[T::zero(); NR]; 4];
            for j in 0..kk {
                let bj: &[T; NR] = b[j * p + x..][..NR].try_into().unwrap();
                for r in 0..4 {
                    let w = rows[r][j];
                    for c in 0..NR {
                        acc[r][c] += w * bj[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                for (o, &v) in out[(i + r) * p + x..][..NR].iter_mut().zip(row) {
                    *o += v;
                }
            }
            x += NR;
        }
        for x in full..p {
            for r in 0..4 {
                let mut s = T::zero();
                for j in 0..kk {
                    s += rows[r][j] * b[j * p + x];
                }
                out[(i + r) * p + x] += s;
            }
        }
        i += 4;
    }
    for i in i..m {
        let dst = &mut out[i * p..][..p];
        for j in 0..kk {
            let w = a[i * kk + j];
            for (o, &v) in dst.iter_mut().zip(&b[j * p..][..p]) {
                *o += w * v;
            }
        }
    }
}

/// Dot product with eight independent partial sums so the loop vectorises.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    lanes.iter().copied().sum::<T>() + tail
}

#[cfg(feature = "parallel")]
fn for_each_sample<T, R, F>(buf: &mut [T], chunk: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync + Send,
{
    use rayon::prelude::*;
    buf.par_chunks_mut(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn for_each_sample<T, R, F>(buf: &mut [T], chunk: usize, f: F) -> Vec<R>
where
    F: Fn(usize, &mut [T]) -> R,
{
    buf.chunks_mut(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (p, kk, hw) = (g.out_plane(), g.patch_len(), g.h * g.w);
    let mut out = vec![T::zero(); g.n * g.cout * p];
    for_each_sample(&mut out, g.cout * p, |ni, dst| {
        if let Some(b) = bias {
            for (co, plane) in dst.chunks_mut(p).enumerate() {
                plane.fill(b[co]);
            }
        }
        let mut col = vec![T::zero(); kk * p];
        im2col(g, &x[ni * g.cin * hw..][..g.cin * hw], &mut col);
        gemm_acc(dst, w, &col, g.cout, kk, p);
    });
    out
}

pub(crate) fn conv_backward_input<T: Real>(g: &ConvGeom, gout: &[T], w: &[T]) -> Vec<T> {
    let (p, kk, hw) = (g.out_plane(), g.patch_len(), g.h * g.w);
    let mut wt = vec![T::zero(); kk * g.cout];
    for co in 0..g.cout {
        for j in 0..kk {
            wt[j * g.cout + co] = w[co * kk + j];
        }
    }
    let mut gin = vec![T::zero(); g.n * g.cin * hw];
    for_each_sample(&mut gin, g.cin * hw, |ni, dst| {
        let mut col = vec![T::zero(); kk * p];
        gemm_acc(&mut col, &wt, &gout[ni * g.cout * p..][..g.cout * p], kk, g.cout, p);
        col2im(g, &col, dst);
    });
    gin
}

pub(crate) fn conv_backward_weight<T: Real>(g: &ConvGeom, gout: &[T], x: &[T]) -> Vec<T> {
    let (p, kk, hw) = (g.out_plane(), g.patch_len(), g.h * g.w);
    let mut scratch = vec![T::zero(); g.n * kk * p];
    let partial = for_each_sample(&mut scratch, kk * p, |ni, col| {
        im2col(g, &x[ni * g.cin * hw..][..g.cin * hw], col);
        let go = &gout[ni * g.cout * p..][..g.cout * p];
        let mut gw = vec![T::zero(); g.cout * kk];
        for co in 0..g.cout {
            for j in 0..kk {
                gw[co * kk + j] = dot(&go[co * p..][..p], &col[j * p..][..p]);
            }
        }
        gw
    });
    let mut gw = vec![T::zero(); g.cout * kk];
    for part in partial {
        for (a, b) in gw.iter_mut().zip(part) {
            *a += b;
        }
    }
    gw
}

pub(crate) fn conv_backward_bias<T: Real>(g: &ConvGeom, gout: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let mut gb = vec![T::zero(); g.cout];
    for ni in 0..g.n {
        for (co, b) in gb.iter_mut().enumerate() {
            *b += gout[(ni * g.cout + co) * plane..][..plane].iter().copied().sum::<T>();
        }
    }
    gb
}

/// Zero-padded 2D cross-correlation without recording on a tape.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(
        input.dims4("conv2d input")?,
        weight.dims4("conv2d weight")?,
        stride,
        padding,
    )?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: b.shape().to_vec(),
                rhs: vec![g.cout],
            });
        }
    }
    let out = conv_forward(&g, input.data(), weight.data(), bias.map(|b| b.data()));
    Tensor::new(&g.out_shape(), out)
}

pub(crate) fn shuffle_raw<T: Copy>(x: &[T], [n, c, h, w]: [usize; 4], s: usize, inverse: bool) -> Vec<T> {
    // `c` is the low-resolution channel count (input channels / s²).
    let mut out = x.to_vec();
    let (hs, ws) = (h * s, w * s);
    for ni in 0..n {
        for ci in 0..c {
            for a in 0..s {
                for b in 0..s {
                    let lr_plane = (ni * c * s * s + ci * s * s + a * s + b) * h * w;
                    let hr_plane = (ni * c + ci) * hs * ws;
                    for y in 0..h {
                        for xx in 0..w {
                            let lr = lr_plane + y * w + xx;
                            let hr = hr_plane + (y * s + a) * ws + xx * s + b;
                            if inverse {
                                out[lr] = x[hr];
                            } else {
                                out[hr] = x[lr];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Depth-to-space: `[N, C·s², H, W] -> [N, C, H·s, W·s]`.
pub fn pixel_shuffle<T: Real>(input: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, cs, h, w] = input.dims4("pixel_shuffle")?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(invalid!("pixel_shuffle: {cs} channels not divisible by {s}^2"));
    }
    let c = cs / (s * s);
    Tensor::new(&[n, c, h * s, w * s], shuffle_raw(input.data(), [n, c, h, w], s, false))
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(input: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, c, hs, ws] = input.dims4("pixel_unshuffle")?;
    if s == 0 || hs % s != 0 || ws % s != 0 {
        return Err(invalid!("pixel_unshuffle: {hs}x{ws} not divisible by {s}"));
    }
    Tensor::new(
        &[n, c * s * s, hs / s, ws / s],
        shuffle_raw(input.data(), [n, c, hs / s, ws / s], s, true),
    )
}

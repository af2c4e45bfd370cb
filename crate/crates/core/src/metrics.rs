//! Colour conversion, PSNR and SSIM.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{invalid, Result};
use crate::image::{ColorSpace, Image};
use crate::Real;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

// BT.601, full-range RGB in [0, 1] to studio-swing YCbCr (scaled by 1/255).
const RGB_TO_YCC: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const YCC_OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

fn inverse3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

fn apply3<T: Real>(
    img: &Image<T>,
    m: &[[f64; 3]; 3],
    pre: [f64; 3],
    post: [f64; 3],
    scale: f64,
    cs: ColorSpace,
) -> Result<Image<T>> {
    if img.channels() != 3 {
        return Err(invalid!("colour conversion needs 3 channels, got {}", img.channels()));
    }
    let n = img.height() * img.width();
    let mut out = vec![T::zero(); 3 * n];
    let (p0, p1, p2) = (img.plane(0), img.plane(1), img.plane(2));
    for i in 0..n {
        let v = [p0[i].f64() - pre[0], p1[i].f64() - pre[1], p2[i].f64() - pre[2]];
        for c in 0..3 {
            out[c * n + i] = T::of((m[c][0] * v[0] + m[c][1] * v[1] + m[c][2] * v[2]) * scale + post[c]);
        }
    }
    Image::new(img.height(), img.width(), 3, cs, out)
}

/// BT.601 RGB to studio-swing YCbCr; Y spans `[16/255, 235/255]`.
pub fn rgb_to_ycbcr<T: Real>(img: &Image<T>) -> Result<Image<T>> {
    let post = YCC_OFFSET.map(|v| v / 255.0);
    apply3(img, &RGB_TO_YCC, [0.0; 3], post, 1.0 / 255.0, ColorSpace::YCbCr)
}

/// Inverse of [`rgb_to_ycbcr`] (no clamping).
pub fn ycbcr_to_rgb<T: Real>(img: &Image<T>) -> Result<Image<T>> {
    let pre = YCC_OFFSET.map(|v| v / 255.0);
    apply3(img, &inverse3(&RGB_TO_YCC), pre, [0.0; 3], 255.0, ColorSpace::Rgb)
}

/// Luma plane of a colour image; single-channel images are returned as is.
pub fn luma<T: Real>(img: &Image<T>) -> Result<Image<T>> {
    match (img.channels(), img.colorspace()) {
        (1, _) => Ok(img.clone()),
        (3, ColorSpace::YCbCr) => Ok(img.channel(0)),
        (3, _) => Ok(rgb_to_ycbcr(img)?.channel(0)),
        (c, _) => Err(invalid!("unsupported channel count {c}")),
    }
}

fn cropped<T: Real>(a: &Image<T>, border: usize) -> Result<Image<T>> {
    if 2 * border >= a.height() || 2 * border >= a.width() {
        return Err(invalid!(
            "border {border} leaves nothing of a {}x{} image",
            a.height(),
            a.width()
        ));
    }
    a.crop(border, border, a.height() - 2 * border, a.width() - 2 * border)
}

pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>, border: usize) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(invalid!(
            "image dimensions differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        ));
    }
    let (a, b) = (cropped(a, border)?, cropped(b, border)?);
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| (p.f64() - q.f64()).powi(2))
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// PSNR in dB with peak 1.0 after removing `border` pixels per side.
/// Identical images report [`PSNR_CAP_DB`].
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>, border: usize) -> Result<f64> {
    let m = mse(a, b, border)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            tmp[y * ow + xo] = (0..k).map(|j| g[j] * x[y * w + xo + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..k).map(|j| g[j] * tmp[(yo + j) * ow + xo]).sum();
        }
    }
    (out, oh, ow)
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1), averaged over all window positions that fit
/// inside the image after cropping `border` pixels.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>, border: usize) -> Result<f64> {
    if a.channels() != 1 || b.channels() != 1 {
        return Err(invalid!("ssim needs single-channel images"));
    }
    if !a.same_dims(b) {
        return Err(invalid!("image dimensions differ"));
    }
    let (a, b) = (cropped(a, border)?, cropped(b, border)?);
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        ));
    }
    let g = gaussian_window();
    let x: Vec<f64> = a.pixels().iter().map(|v| v.f64()).collect();
    let y: Vec<f64> = b.pixels().iter().map(|v| v.f64()).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mx, _, _) = filter_valid(&x, h, w, &g);
    let (my, _, _) = filter_valid(&y, h, w, &g);
    let (sxx, _, _) = filter_valid(&xx, h, w, &g);
    let (syy, _, _) = filter_valid(&yy, h, w, &g);
    let (sxy, _, _) = filter_valid(&xy, h, w, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricChannel {
    Y,
    RgbMean,
    Gray,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub border_crop: usize,
    pub channel: MetricChannel,
}

/// PSNR/SSIM on luma (colour inputs) or the single plane (gray inputs).
pub fn compare<T: Real>(pred: &Image<T>, target: &Image<T>, border: usize) -> Result<MetricReport> {
    let channel = if target.channels() == 3 {
        MetricChannel::Y
    } else {
        MetricChannel::Gray
    };
    let (p, t) = (luma(pred)?, luma(target)?);
    Ok(MetricReport {
        psnr_db: psnr(&p, &t, border)?,
        ssim: ssim(&p, &t, border)?,
        border_crop: border,
        channel,
    })
}

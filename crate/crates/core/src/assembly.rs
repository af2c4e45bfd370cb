//! Per-pixel filter assembly `F_i = Φ_i D` and prediction `ŷ_i = Φ_i D B_iᵀ`.
//!
//! Two execution paths compute the same prediction:
//!
//! * [`predict_pixelwise`] works on an explicit [`PatchMatrix`]; it is the
//!   direct transcription of the formula and is mostly used by tests.
//! * [`predict_basisconv`] convolves the source image once with each of the
//!   `L` bases and then takes a per-pixel dot product with the coefficients.
//!   It never materialises the patch matrix and is the production path.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::dictionary::{Dictionary, FilterKernel};
use crate::error::{invalid, Error, Result};
use crate::image::{ColorSpace, Image};
use crate::metrics::{rgb_to_ycbcr, ycbcr_to_rgb};
use crate::resample::{correlate_padded, pad_plane, Padding, PatchMatrix};
use crate::tensor::Tensor;
use crate::Real;

/// Per-pixel coefficient vectors, stored planar as `[L, H, W]`.
///
/// Coefficients are unconstrained: no sign or normalisation is imposed.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMap<T = f64> {
    height: usize,
    width: usize,
    l: usize,
    coeffs: Vec<T>,
}

impl<T: Real> CoefficientMap<T> {
    pub fn new(height: usize, width: usize, l: usize, coeffs: Vec<T>) -> Result<Self> {
        if coeffs.len() != height * width * l {
            return Err(invalid!(
                "{} coefficients for {height}x{width} pixels with L = {l}",
                coeffs.len()
            ));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficient map".into()));
        }
        Ok(Self {
            height,
            width,
            l,
            coeffs,
        })
    }

    pub fn zeros(height: usize, width: usize, l: usize) -> Self {
        Self {
            height,
            width,
            l,
            coeffs: vec![T::zero(); height * width * l],
        }
    }

    /// Every pixel selects basis `j` with weight one.
    pub fn one_hot(height: usize, width: usize, l: usize, j: usize) -> Self {
        let mut m = Self::zeros(height, width, l);
        m.plane_mut(j).fill(T::one());
        m
    }

    /// Coefficient map of batch item `n` of a `[N, L, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<T>, n: usize) -> Result<Self> {
        let [tn, l, h, w] = t.dims4("coefficient map")?;
        if n >= tn {
            return Err(invalid!("batch index {n} out of range {tn}"));
        }
        Self::new(h, w, l, t.data()[n * l * h * w..(n + 1) * l * h * w].to_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn basis_count(&self) -> usize {
        self.l
    }

    pub fn data(&self) -> &[T] {
        &self.coeffs
    }

    pub fn plane(&self, l: usize) -> &[T] {
        let n = self.height * self.width;
        &self.coeffs[l * n..(l + 1) * n]
    }

    pub fn plane_mut(&mut self, l: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.coeffs[l * n..(l + 1) * n]
    }

    /// `Φ_i` for row-major pixel index `i`.
    pub fn pixel(&self, i: usize) -> Vec<T> {
        let n = self.height * self.width;
        (0..self.l).map(|l| self.coeffs[l * n + i]).collect()
    }

    pub fn set_pixel(&mut self, i: usize, phi: &[T]) {
        let n = self.height * self.width;
        for (l, &v) in phi.iter().enumerate() {
            self.coeffs[l * n + i] = v;
        }
    }

    /// `α·self + β·other`.
    pub fn lincomb(&self, alpha: T, other: &Self, beta: T) -> Result<Self> {
        if (self.height, self.width, self.l) != (other.height, other.width, other.l) {
            return Err(invalid!("coefficient maps differ in shape"));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(&a, &b)| alpha * a + beta * b)
            .collect();
        Ok(Self { coeffs, ..*self })
    }
}

fn check_dict<T: Real>(phi: &CoefficientMap<T>, dict: &Dictionary) -> Result<()> {
    if phi.basis_count() != dict.len() {
        return Err(invalid!(
            "coefficient map has L = {} but dictionary has {} bases",
            phi.basis_count(),
            dict.len()
        ));
    }
    Ok(())
}

/// `Φ_i D` reshaped to `k x k`. The tap sum equals `Σ Φ_i` for a dictionary
/// whose rows sum to one.
pub fn assemble_filter<T: Real>(phi_i: &[T], dict: &Dictionary) -> Result<FilterKernel> {
    if phi_i.len() != dict.len() {
        return Err(invalid!("{} coefficients for {} bases", phi_i.len(), dict.len()));
    }
    let n = dict.kernel_size() * dict.kernel_size();
    let mut taps = vec![0.0; n];
    for (l, &c) in phi_i.iter().enumerate() {
        let c = c.f64();
        for (t, &d) in taps.iter_mut().zip(dict.row(l)) {
            *t += c * d;
        }
    }
    FilterKernel::new(dict.kernel_size(), taps)
}

/// Reference path: `ŷ_i = Φ_i · (D B_iᵀ)` for every row of `b`.
pub fn predict_pixelwise<T: Real>(b: &PatchMatrix<T>, phi: &CoefficientMap<T>, dict: &Dictionary) -> Result<Image<T>> {
    check_dict(phi, dict)?;
    if b.kernel_size() != dict.kernel_size() {
        return Err(invalid!(
            "patch size {} differs from dictionary kernel size {}",
            b.kernel_size(),
            dict.kernel_size()
        ));
    }
    if (b.height(), b.width()) != (phi.height(), phi.width()) {
        return Err(invalid!(
            "patch matrix covers {}x{} pixels, coefficients {}x{}",
            b.height(),
            b.width(),
            phi.height(),
            phi.width()
        ));
    }
    let d: Vec<T> = dict.as_matrix().iter().map(|&v| T::of(v)).collect();
    let (n, kk, l) = (b.rows(), b.cols(), dict.len());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = b.row(i);
        let mut y = T::zero();
        for li in 0..l {
            let resp: T = d[li * kk..(li + 1) * kk].iter().zip(row).map(|(&p, &q)| p * q).sum();
            y += phi.coeffs[li * n + i] * resp;
        }
        out.push(y);
    }
    Image::gray(b.height(), b.width(), out)
}

/// Responses of one plane to every basis, `[L, H, W]`.
pub fn basis_responses<T: Real>(plane: &[T], h: usize, w: usize, dict: &Dictionary, padding: Padding) -> Vec<T> {
    let k = dict.kernel_size();
    let padded = pad_plane(plane, h, w, k / 2, padding);
    let mut out = vec![T::zero(); dict.len() * h * w];
    for (l, dst) in out.chunks_mut(h * w).enumerate() {
        let taps: Vec<T> = dict.row(l).iter().map(|&v| T::of(v)).collect();
        correlate_padded(&padded, h, w, &taps, k, k, dst);
    }
    out
}

/// Basis responses of every channel, `[C·L, H, W]` (channel-major).
pub fn image_responses<T: Real>(img: &Image<T>, dict: &Dictionary, padding: Padding) -> Vec<T> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(img.channels() * dict.len() * h * w);
    for c in 0..img.channels() {
        out.extend(basis_responses(img.plane(c), h, w, dict, padding));
    }
    out
}

/// Production path: basis convolutions followed by a per-pixel dot product.
/// The same coefficients are applied to every channel of `upsampled`.
pub fn predict_basisconv<T: Real>(
    upsampled: &Image<T>,
    phi: &CoefficientMap<T>,
    dict: &Dictionary,
    padding: Padding,
) -> Result<Image<T>> {
    check_dict(phi, dict)?;
    let (h, w) = (upsampled.height(), upsampled.width());
    if (h, w) != (phi.height(), phi.width()) {
        return Err(invalid!(
            "image is {h}x{w} but coefficients are {}x{}",
            phi.height(),
            phi.width()
        ));
    }
    let hw = h * w;
    let mut out = vec![T::zero(); upsampled.channels() * hw];
    for c in 0..upsampled.channels() {
        let resp = basis_responses(upsampled.plane(c), h, w, dict, padding);
        let dst = &mut out[c * hw..(c + 1) * hw];
        for l in 0..dict.len() {
            for ((d, &p), &r) in dst.iter_mut().zip(phi.plane(l)).zip(&resp[l * hw..(l + 1) * hw]) {
                *d += p * r;
            }
        }
    }
    Image::new(h, w, upsampled.channels(), upsampled.colorspace(), out)
}

/// Rejects a basis-convolution run whose source or padding differs from the
/// one a patch matrix was extracted with.
pub fn check_same_origin<T: Real>(b: &PatchMatrix<T>, upsampled: &Image<T>, padding: Padding) -> Result<()> {
    if b.padding() != padding {
        return Err(invalid!(
            "padding mismatch: patch matrix uses {:?}, requested {:?}",
            b.padding(),
            padding
        ));
    }
    if (b.height(), b.width()) != (upsampled.height(), upsampled.width()) {
        return Err(invalid!("patch matrix and image dimensions differ"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecutionPath {
    Pixelwise,
    #[default]
    BasisConv,
}

/// Which planes of a colour image the filters are applied to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChannelMode {
    /// Same coefficients on every channel.
    #[default]
    All,
    /// Filter only luma; chroma of the source passes through.
    Luma,
}

/// Applies the assembled per-pixel filters to `img`.
pub fn enhance<T: Real>(
    img: &Image<T>,
    phi: &CoefficientMap<T>,
    dict: &Dictionary,
    path: ExecutionPath,
    channels: ChannelMode,
) -> Result<Image<T>> {
    if channels == ChannelMode::Luma && img.channels() == 3 {
        let ycc = match img.colorspace() {
            ColorSpace::YCbCr => img.clone(),
            _ => rgb_to_ycbcr(img)?,
        };
        let mut planes = ycc.split();
        planes[0] = enhance(&planes[0], phi, dict, path, ChannelMode::All)?;
        let merged = Image::from_planes(&planes, ColorSpace::YCbCr)?;
        return match img.colorspace() {
            ColorSpace::YCbCr => Ok(merged),
            _ => ycbcr_to_rgb(&merged),
        };
    }
    match path {
        ExecutionPath::BasisConv => predict_basisconv(img, phi, dict, Padding::Reflect101),
        ExecutionPath::Pixelwise => {
            let mut planes = Vec::with_capacity(img.channels());
            for plane in img.split() {
                let b = crate::resample::extract_patches(&plane, dict.kernel_size())?;
                planes.push(predict_pixelwise(&b, phi, dict)?);
            }
            if planes.len() == 1 {
                return Ok(planes.pop().unwrap());
            }
            Image::from_planes(&planes, img.colorspace())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, random_dictionary, BasisSpec, DictionaryConfig};
    use crate::resample::{extract_patches, extract_patches_with};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    fn random_phi(rng: &mut ChaCha8Rng, h: usize, w: usize, l: usize) -> CoefficientMap {
        CoefficientMap::new(h, w, l, (0..h * w * l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn with_delta(d: &Dictionary) -> Dictionary {
        d.extended(
            "delta",
            vec![(
                FilterKernel::impulse(d.kernel_size()).unwrap(),
                BasisSpec::Custom("delta".into()),
            )],
        )
        .unwrap()
    }

    #[test]
    fn assemble_filter_examples() {
        let d = build_dictionary(&DictionaryConfig::preset(14).unwrap()).unwrap();
        let mut phi = vec![0.0; 14];
        phi[5] = 1.0;
        assert_eq!(assemble_filter(&phi, &d).unwrap(), d.bases()[5]);
        assert!(assemble_filter(&[0.0; 14], &d)
            .unwrap()
            .taps()
            .iter()
            .all(|&t| t == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi: Vec<f64> = (0..14).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = assemble_filter(&phi, &d).unwrap();
        assert!((f.sum() - phi.iter().sum::<f64>()).abs() < 1e-9);
        assert!(assemble_filter(&[0.0; 13], &d).is_err());
    }

    #[test]
    fn pixelwise_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = build_dictionary(&DictionaryConfig::preset(14).unwrap()).unwrap();
        let img = random_image(&mut rng, 8, 8);
        let phi = random_phi(&mut rng, 8, 8, 14);
        let b = extract_patches(&img, 5).unwrap();
        let got = predict_pixelwise(&b, &phi, &d).unwrap();
        for i in 0..64 {
            let mut y = 0.0;
            for l in 0..14 {
                for j in 0..25 {
                    y += phi.pixel(i)[l] * d.row(l)[j] * b.row(i)[j];
                }
            }
            assert!((got.pixels()[i] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_selection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = with_delta(&build_dictionary(&DictionaryConfig::preset(14).unwrap()).unwrap());
        let img = random_image(&mut rng, 9, 7);
        let phi = CoefficientMap::one_hot(9, 7, 15, 14);
        let b = extract_patches(&img, 5).unwrap();
        assert_eq!(predict_pixelwise(&b, &phi, &d).unwrap(), img);
        assert_eq!(predict_basisconv(&img, &phi, &d, Padding::Reflect101).unwrap(), img);
        let zero = predict_pixelwise(&b, &CoefficientMap::zeros(9, 7, 15), &d).unwrap();
        assert!(zero.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_image_scales_by_coefficient_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_dictionary(1, 6, 5).unwrap();
        let phi = random_phi(&mut rng, 6, 6, 6);
        let out = predict_basisconv(&Image::constant(6, 6, 0.4), &phi, &d, Padding::Reflect101).unwrap();
        for i in 0..36 {
            let s: f64 = phi.pixel(i).iter().sum();
            assert!((out.pixels()[i] - 0.4 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn paths_agree_in_both_precisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = build_dictionary(&DictionaryConfig::default()).unwrap();
        for _ in 0..3 {
            let img = random_image(&mut rng, 16, 16);
            let phi = random_phi(&mut rng, 16, 16, 72);
            let a = predict_pixelwise(&extract_patches(&img, 5).unwrap(), &phi, &d).unwrap();
            let b = predict_basisconv(&img, &phi, &d, Padding::Reflect101).unwrap();
            for (p, q) in a.pixels().iter().zip(b.pixels()) {
                assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
            }
            let (img32, phi32) = (
                img.cast::<f32>(),
                CoefficientMap::new(16, 16, 72, phi.data().iter().map(|&v| v as f32).collect()).unwrap(),
            );
            let a = predict_pixelwise(&extract_patches(&img32, 5).unwrap(), &phi32, &d).unwrap();
            let b = predict_basisconv(&img32, &phi32, &d, Padding::Reflect101).unwrap();
            for (p, q) in a.pixels().iter().zip(b.pixels()) {
                assert!((p - q).abs() <= 1e-6 * p.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mismatches_are_rejected() {
        let d = random_dictionary(0, 4, 5).unwrap();
        let img = Image::constant(6, 6, 0.5);
        let b = extract_patches_with(&img, 5, Padding::Zero).unwrap();
        assert!(check_same_origin(&b, &img, Padding::Reflect101).is_err());
        assert!(check_same_origin(&b, &img, Padding::Zero).is_ok());
        assert!(predict_pixelwise(&b, &CoefficientMap::zeros(6, 6, 5), &d).is_err());
        assert!(predict_basisconv(&img, &CoefficientMap::zeros(5, 6, 4), &d, Padding::Reflect101).is_err());
        let b3 = extract_patches(&img, 3).unwrap();
        assert!(predict_pixelwise(&b3, &CoefficientMap::zeros(6, 6, 4), &d).is_err());
        assert!(CoefficientMap::new(1, 1, 2, vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn luma_mode_leaves_chroma() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = random_dictionary(2, 5, 5).unwrap();
        let planes: Vec<Image> = (0..3)
            .map(|_| random_image(&mut rng, 8, 8).map(|v| 0.25 + 0.5 * v))
            .collect();
        let rgb = Image::from_planes(&planes, ColorSpace::Rgb).unwrap();
        let phi = random_phi(&mut rng, 8, 8, 5);
        let out = enhance(&rgb, &phi, &d, ExecutionPath::BasisConv, ChannelMode::Luma).unwrap();
        let (a, b) = (rgb_to_ycbcr(&rgb).unwrap(), rgb_to_ycbcr(&out).unwrap());
        for c in 1..3 {
            for (p, q) in a.plane(c).iter().zip(b.plane(c)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        let all = enhance(&rgb, &phi, &d, ExecutionPath::Pixelwise, ChannelMode::All).unwrap();
        let all_bc = enhance(&rgb, &phi, &d, ExecutionPath::BasisConv, ChannelMode::All).unwrap();
        for (p, q) in all.pixels().iter().zip(all_bc.pixels()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prediction_is_linear_in_phi(seed: u64, alpha in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = random_dictionary(seed, 4, 3).unwrap();
            let img = random_image(&mut rng, 5, 6);
            let (p, q) = (random_phi(&mut rng, 5, 6, 4), random_phi(&mut rng, 5, 6, 4));
            let mix = p.lincomb(alpha, &q, 1.0).unwrap();
            let f = |phi: &CoefficientMap| predict_basisconv(&img, phi, &d, Padding::Reflect101).unwrap();
            let (fm, fp, fq) = (f(&mix), f(&p), f(&q));
            for i in 0..30 {
                prop_assert!((fm.pixels()[i] - (alpha * fp.pixels()[i] + fq.pixels()[i])).abs() < 1e-12);
            }
        }
    }
}

//! Closed-form coefficient fits that bypass the network.
//!
//! For pixel `i` the prediction is `Φ_i · r_i` with responses
//! `r_i = D B_iᵀ`. A single pixel gives one equation in `L` unknowns, so the
//! fits here share coefficients either over the whole image
//! ([`fit_global`]) or over a `w x w` window around each pixel with a ridge
//! penalty ([`fit_windowed`]). They serve as validation devices and as
//! upper bounds for dictionary comparisons.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::assembly::CoefficientMap;
use crate::dictionary::Dictionary;
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::linalg::solve_normal_equations;
use crate::metrics::{luma, psnr};
use crate::resample::{bicubic_resize_to, extract_patches, PatchMatrix};

/// Row-major `[pixels, L]` matrix of `D B_iᵀ`.
pub fn responses(b: &PatchMatrix, dict: &Dictionary) -> Result<Vec<f64>> {
    if b.kernel_size() != dict.kernel_size() {
        return Err(invalid!(
            "patch size {} differs from dictionary kernel size {}",
            b.kernel_size(),
            dict.kernel_size()
        ));
    }
    let (n, l, kk) = (b.rows(), dict.len(), b.cols());
    let d = dict.as_matrix();
    let mut r = vec![0.0; n * l];
    for i in 0..n {
        let row = b.row(i);
        for li in 0..l {
            r[i * l + li] = d[li * kk..(li + 1) * kk].iter().zip(row).map(|(p, q)| p * q).sum();
        }
    }
    Ok(r)
}

fn check_target(b: &PatchMatrix, y: &Image) -> Result<()> {
    if y.channels() != 1 || (y.height(), y.width()) != (b.height(), b.width()) {
        return Err(invalid!(
            "target must be a single-channel {}x{} image",
            b.height(),
            b.width()
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalFit {
    pub phi: Vec<f64>,
    /// Mean squared prediction error over all pixels.
    pub residual: f64,
    /// The Gram matrix was singular and the diagonal jitter decided the
    /// particular minimiser.
    pub rank_deficient: bool,
}

/// One coefficient vector shared by every pixel, by least squares.
pub fn fit_global(b: &PatchMatrix, dict: &Dictionary, y: &Image) -> Result<GlobalFit> {
    check_target(b, y)?;
    let l = dict.len();
    if b.rows() < l {
        return Err(invalid!("{} pixels cannot determine {l} coefficients", b.rows()));
    }
    let r = responses(b, dict)?;
    let t = y.pixels();
    let mut gram = vec![0.0; l * l];
    let mut rhs = vec![0.0; l];
    for (ri, &yi) in r.chunks(l).zip(t) {
        for a in 0..l {
            rhs[a] += ri[a] * yi;
            for c in 0..=a {
                gram[a * l + c] += ri[a] * ri[c];
            }
        }
    }
    symmetrize(&mut gram, l);
    let sol = solve_normal_equations(&gram, l, &rhs, 0.0)?;
    let residual = shared_residual(&r, l, t, &sol.x);
    Ok(GlobalFit {
        phi: sol.x,
        residual,
        rank_deficient: sol.rank_deficient,
    })
}

fn symmetrize(g: &mut [f64], l: usize) {
    for a in 0..l {
        for c in a + 1..l {
            g[a * l + c] = g[c * l + a];
        }
    }
}

fn shared_residual(r: &[f64], l: usize, t: &[f64], phi: &[f64]) -> f64 {
    let sum: f64 = r
        .chunks(l)
        .zip(t)
        .map(|(ri, &yi)| {
            let p: f64 = ri.iter().zip(phi).map(|(a, b)| a * b).sum();
            (p - yi).powi(2)
        })
        .sum();
    sum / t.len() as f64
}

/// Mean squared error of every one-hot coefficient vector, i.e. of each
/// basis used alone as a global filter.
pub fn single_filter_residuals(b: &PatchMatrix, dict: &Dictionary, y: &Image) -> Result<Vec<f64>> {
    check_target(b, y)?;
    let l = dict.len();
    let r = responses(b, dict)?;
    let t = y.pixels();
    Ok((0..l)
        .map(|j| r.chunks(l).zip(t).map(|(ri, &yi)| (ri[j] - yi).powi(2)).sum::<f64>() / t.len() as f64)
        .collect())
}

/// Windowed ridge problem settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RidgeProblem {
    /// Odd window side `w`; windows are clipped at the image border.
    pub window: usize,
    pub ridge_lambda: f64,
}

impl Default for RidgeProblem {
    fn default() -> Self {
        Self {
            window: 7,
            ridge_lambda: 1e-4,
        }
    }
}

impl RidgeProblem {
    pub fn validate(&self, l: usize) -> Result<()> {
        if self.window.is_multiple_of(2) {
            return Err(invalid!("window must be odd, got {}", self.window));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(invalid!("ridge lambda must be non-negative"));
        }
        if self.window * self.window < l && self.ridge_lambda == 0.0 {
            return Err(invalid!(
                "window {}x{} cannot determine {l} coefficients without a ridge term",
                self.window,
                self.window
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedFit {
    pub coeffs: CoefficientMap<f64>,
    /// Per-pixel predictions `Φ_i · r_i`.
    pub prediction: Image,
    /// Mean squared error of [`WindowedFit::prediction`].
    pub residual: f64,
}

/// Spatially varying coefficients: pixel `i` gets the ridge solution over
/// the window of (response, target) pairs centred on it.
pub fn fit_windowed(problem: &RidgeProblem, b: &PatchMatrix, dict: &Dictionary, y: &Image) -> Result<WindowedFit> {
    check_target(b, y)?;
    let l = dict.len();
    problem.validate(l)?;
    let r = responses(b, dict)?;
    let (h, w) = (b.height(), b.width());
    let t = y.pixels();
    let rad = problem.window / 2;
    let mut coeffs = CoefficientMap::zeros(h, w, l);
    let mut pred = vec![0.0; h * w];
    let mut gram = vec![0.0; l * l];
    let mut rhs = vec![0.0; l];
    for py in 0..h {
        for px in 0..w {
            gram.fill(0.0);
            rhs.fill(0.0);
            for qy in py.saturating_sub(rad)..(py + rad + 1).min(h) {
                for qx in px.saturating_sub(rad)..(px + rad + 1).min(w) {
                    let j = qy * w + qx;
                    let rj = &r[j * l..(j + 1) * l];
                    for a in 0..l {
                        rhs[a] += rj[a] * t[j];
                        let ra = rj[a];
                        let row = &mut gram[a * l..a * l + a + 1];
                        for (g, &rc) in row.iter_mut().zip(rj) {
                            *g += ra * rc;
                        }
                    }
                }
            }
            symmetrize(&mut gram, l);
            let sol = solve_normal_equations(&gram, l, &rhs, problem.ridge_lambda)?;
            let i = py * w + px;
            pred[i] = r[i * l..(i + 1) * l].iter().zip(&sol.x).map(|(a, b)| a * b).sum();
            coeffs.set_pixel(i, &sol.x);
        }
    }
    let residual = pred.iter().zip(t).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / t.len() as f64;
    Ok(WindowedFit {
        coeffs,
        prediction: Image::gray(h, w, pred)?,
        residual,
    })
}

/// Settings for [`ablation_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AblationSpec {
    pub scale: usize,
    pub problem: RidgeProblem,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub dictionary: String,
    pub l: usize,
    /// Mean luma PSNR of the windowed-oracle prediction, border = scale.
    pub psnr_db: f64,
    pub mean_residual: f64,
}

/// Oracle PSNR of each dictionary over `(lr, hr)` pairs, best first.
///
/// Each LR image is bicubically upsampled to the HR size, patches are taken
/// from the upsampled luma, and [`fit_windowed`] is fitted against HR luma.
pub fn ablation_report(
    dicts: &[Dictionary],
    images: &[(Image, Image)],
    spec: &AblationSpec,
) -> Result<Vec<AblationRow>> {
    if dicts.is_empty() || images.is_empty() {
        return Err(invalid!("ablation needs at least one dictionary and one image pair"));
    }
    let mut prepared = Vec::with_capacity(images.len());
    for (lr, hr) in images {
        let hr_y = luma(hr)?;
        let up = bicubic_resize_to(&luma(lr)?, hr_y.height(), hr_y.width())?;
        prepared.push((up, hr_y));
    }
    let mut rows = Vec::with_capacity(dicts.len());
    for dict in dicts {
        let mut psnr_sum = 0.0;
        let mut res_sum = 0.0;
        for (up, hr_y) in &prepared {
            let b = extract_patches(up, dict.kernel_size())?;
            let fit = fit_windowed(&spec.problem, &b, dict, hr_y)?;
            psnr_sum += psnr(&fit.prediction.clamped(), hr_y, spec.scale)?;
            res_sum += fit.residual;
        }
        let n = prepared.len() as f64;
        rows.push(AblationRow {
            dictionary: dict.name().into(),
            l: dict.len(),
            psnr_db: psnr_sum / n,
            mean_residual: res_sum / n,
        });
    }
    rows.sort_by(|a, b| {
        b.psnr_db
            .total_cmp(&a.psnr_db)
            .then_with(|| a.dictionary.cmp(&b.dictionary))
    });
    Ok(rows)
}

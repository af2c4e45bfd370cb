//! Fixed filter dictionaries built from anisotropic Gaussians and
//! differences of Gaussians.
//!
//! A Gaussian basis is parameterised by scale `gamma`, rotation `theta` and
//! the axis pair `(sigma1, sigma2)`; its covariance is
//! `gamma² · U(theta) · diag(sigma1², sigma2²) · U(theta)ᵀ`. Kernel taps are
//! the elliptical density sampled at integer offsets and normalised to sum 1.
//!
//! Offsets are `(dx, dy) = (column - centre, row - centre)`, with rows growing
//! downwards, so a positive `theta` rotates the major axis clockwise on
//! screen.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::image::Image;

/// Tolerance used for the sum-to-one invariant.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianSpec {
    pub gamma: f64,
    pub theta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl GaussianSpec {
    /// Validates the parameters and wraps `theta` into `[0, π)`.
    pub fn new(gamma: f64, theta: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        let spec = Self {
            gamma,
            theta: wrap_angle(theta),
            sigma1,
            sigma2,
        };
        spec.covariance()?;
        Ok(spec)
    }

    pub fn isotropic(gamma: f64) -> Self {
        Self {
            gamma,
            theta: 0.0,
            sigma1: 1.0,
            sigma2: 1.0,
        }
    }

    /// Elongated Gaussian with `sigma1 = 1`, `sigma2 = ratio`.
    pub fn anisotropic(gamma: f64, ratio: f64, theta: f64) -> Self {
        Self {
            gamma,
            theta: wrap_angle(theta),
            sigma1: 1.0,
            sigma2: ratio,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.sigma2 / self.sigma1
    }

    pub fn is_isotropic(&self) -> bool {
        self.sigma1 == self.sigma2
    }

    /// Covariance `[[a, b], [b, c]]`, rejected unless positive definite.
    pub fn covariance(&self) -> Result<[[f64; 2]; 2]> {
        let finite = [self.gamma, self.theta, self.sigma1, self.sigma2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.gamma <= 0.0 || self.sigma1 <= 0.0 || self.sigma2 <= 0.0 {
            return Err(Error::Degenerate(format!(
                "covariance of {self:?} is not positive definite"
            )));
        }
        let (s, c) = self.theta.sin_cos();
        let g2 = self.gamma * self.gamma;
        let (l1, l2) = (self.sigma1 * self.sigma1, self.sigma2 * self.sigma2);
        let a = g2 * (c * c * l1 + s * s * l2);
        let b = g2 * (c * s * (l1 - l2));
        let d = g2 * (s * s * l1 + c * c * l2);
        if a * d - b * b <= 0.0 {
            return Err(Error::Degenerate(format!("covariance of {self:?} is singular")));
        }
        Ok([[a, b], [b, d]])
    }
}

/// How a dictionary entry was produced.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BasisSpec {
    Gaussian(GaussianSpec),
    Dog { a: GaussianSpec, b: GaussianSpec },
    Random,
    Custom(String),
}

impl BasisSpec {
    pub fn describe(&self) -> String {
        match self {
            BasisSpec::Gaussian(g) => format!(
                "gaussian gamma={} theta_deg={:.1} r={}",
                g.gamma,
                g.theta.to_degrees(),
                g.ratio()
            ),
            BasisSpec::Dog { a, b } => format!(
                "dog a=(gamma={} theta_deg={:.1} r={}) b=(gamma={} theta_deg={:.1} r={})",
                a.gamma,
                a.theta.to_degrees(),
                a.ratio(),
                b.gamma,
                b.theta.to_degrees(),
                b.ratio()
            ),
            BasisSpec::Random => "random".to_string(),
            BasisSpec::Custom(s) => format!("custom {s}"),
        }
    }
}

/// Square, odd-sized filter in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterKernel {
    size: usize,
    taps: Vec<f64>,
}

impl FilterKernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(invalid!("kernel size must be odd, got {size}"));
        }
        if taps.len() != size * size {
            return Err(invalid!("{} taps for a {size}x{size} kernel", taps.len()));
        }
        Ok(Self { size, taps })
    }

    /// Unit impulse at the centre.
    pub fn impulse(size: usize) -> Result<Self> {
        let mut taps = vec![0.0; size * size];
        taps[size * size / 2] = 1.0;
        Self::new(size, taps)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn tap(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Min-max normalised taps for display; a constant kernel maps to 0.5.
    pub fn display_normalized(&self) -> Vec<f64> {
        let lo = self.taps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.taps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return vec![0.5; self.taps.len()];
        }
        self.taps.iter().map(|&t| (t - lo) / (hi - lo)).collect()
    }
}

fn check_size(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(invalid!("kernel size must be odd and positive, got {k}"));
    }
    Ok(())
}

/// Elliptical Gaussian density sampled on the `k x k` offset grid, before
/// normalisation.
pub fn gaussian_density(spec: &GaussianSpec, k: usize) -> Result<Vec<f64>> {
    check_size(k)?;
    let [[a, b], [_, d]] = spec.covariance()?;
    let det = a * d - b * b;
    let (ia, ib, id) = (d / det, -b / det, a / det);
    let norm = 1.0 / (2.0 * PI * det.sqrt());
    let r = (k / 2) as isize;
    let mut taps = Vec::with_capacity(k * k);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (dx as f64, dy as f64);
            let q = ia * x * x + 2.0 * ib * x * y + id * y * y;
            taps.push(norm * (-0.5 * q).exp());
        }
    }
    Ok(taps)
}

pub fn gaussian_kernel(spec: &GaussianSpec, k: usize) -> Result<FilterKernel> {
    let mut taps = gaussian_density(spec, k)?;
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    FilterKernel::new(k, taps)
}

/// Raw difference `G(a) - G(b)` of two sum-normalised Gaussians; sums to zero.
pub fn dog_difference(a: &GaussianSpec, b: &GaussianSpec, k: usize) -> Result<Vec<f64>> {
    if a == b {
        return Err(Error::Degenerate(
            "difference of identical Gaussians is the zero filter".into(),
        ));
    }
    let ga = gaussian_kernel(a, k)?;
    let gb = gaussian_kernel(b, k)?;
    Ok(ga.taps.iter().zip(&gb.taps).map(|(p, q)| p - q).collect())
}

/// `δ + G(a) - G(b)`: the difference of Gaussians offset by a centre impulse
/// so that the taps sum to one.
pub fn dog_kernel(a: &GaussianSpec, b: &GaussianSpec, k: usize) -> Result<FilterKernel> {
    let mut taps = dog_difference(a, b, k)?;
    taps[k * k / 2] += 1.0;
    FilterKernel::new(k, taps)
}

/// Normalisation applied to difference-of-Gaussian entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DogMode {
    /// Store `δ + (G₁ - G₂)`, which sums to one.
    #[default]
    Delta,
    /// Store the zero-sum difference as is.
    Raw,
}

/// Parameter grid for [`build_dictionary`].
///
/// Candidates are enumerated as: one isotropic Gaussian per `gamma` (when
/// `ratios` contains 1), then every isotropic DoG pair, then for every
/// anisotropic ratio and every `gamma` one Gaussian per `theta_step_degrees`
/// over `[0°, 180°)`. If that yields more than `L` candidates, orientation
/// groups are thinned from the last group backwards by dropping every other
/// orientation; fewer than `L` candidates is an error.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DictionaryConfig {
    pub k: usize,
    #[cfg_attr(feature = "serde", serde(rename = "L"))]
    pub l: usize,
    pub gammas: Vec<f64>,
    pub ratios: Vec<f64>,
    pub theta_step_degrees: f64,
    /// Isotropic scale pairs `[gamma_a, gamma_b]`, giving `G(gamma_a) - G(gamma_b)`.
    pub dog_pairs: Vec<[f64; 2]>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub dog_mode: DogMode,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self {
            k: 5,
            l: 72,
            gammas: vec![0.6, 1.0, 1.5],
            ratios: vec![0.2, 0.5, 1.0],
            theta_step_degrees: 15.0,
            dog_pairs: vec![[0.6, 1.0], [0.6, 1.5], [1.0, 1.5]],
            dog_mode: DogMode::Delta,
        }
    }
}

impl DictionaryConfig {
    /// Built-in grids of 72, 24 and 14 filters. The 24 and 14 grids are
    /// subsets of the 72 grid.
    pub fn preset(l: usize) -> Result<Self> {
        let base = Self::default();
        match l {
            72 => Ok(base),
            24 => Ok(Self {
                l: 24,
                ratios: vec![0.2, 1.0],
                theta_step_degrees: 30.0,
                ..base
            }),
            14 => Ok(Self {
                l: 14,
                gammas: vec![1.0],
                ratios: vec![0.2, 1.0],
                dog_pairs: vec![[0.6, 1.0]],
                ..base
            }),
            _ => Err(invalid!("no dictionary preset of size {l} (available: 72, 24, 14)")),
        }
    }

    pub fn name(&self) -> String {
        format!("G+DoG-{}", self.l)
    }
}

/// `L` filter bases stacked into an `L x k²` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    name: String,
    k: usize,
    bases: Vec<FilterKernel>,
    specs: Vec<BasisSpec>,
    matrix: Vec<f64>,
}

impl Dictionary {
    pub fn from_parts(name: impl Into<String>, bases: Vec<FilterKernel>, specs: Vec<BasisSpec>) -> Result<Self> {
        let k = bases
            .first()
            .ok_or_else(|| invalid!("dictionary needs at least one basis"))?
            .size();
        if bases.iter().any(|b| b.size() != k) {
            return Err(invalid!("all bases must share one kernel size"));
        }
        if specs.len() != bases.len() {
            return Err(invalid!("{} specs for {} bases", specs.len(), bases.len()));
        }
        let matrix = bases.iter().flat_map(|b| b.taps().iter().copied()).collect();
        Ok(Self {
            name: name.into(),
            k,
            bases,
            specs,
            matrix,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Basis count `L`.
    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn bases(&self) -> &[FilterKernel] {
        &self.bases
    }

    pub fn specs(&self) -> &[BasisSpec] {
        &self.specs
    }

    /// Row-major `L x k²` matrix; row `i` is basis `i` flattened.
    pub fn as_matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.k * self.k;
        &self.matrix[i * n..(i + 1) * n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.bases.iter().map(FilterKernel::sum).collect()
    }

    /// Appends extra bases, e.g. an impulse for identity tests.
    pub fn extended(&self, name: impl Into<String>, extra: Vec<(FilterKernel, BasisSpec)>) -> Result<Self> {
        let mut bases = self.bases.clone();
        let mut specs = self.specs.clone();
        for (b, s) in extra {
            bases.push(b);
            specs.push(s);
        }
        Self::from_parts(name, bases, specs)
    }

    /// Tiles the display-normalised filters into one grayscale sheet with a
    /// one-pixel mid-gray gutter, upscaling each tap to `cell x cell` pixels.
    pub fn montage(&self, columns: usize, cell: usize) -> Result<Image> {
        let columns = columns.max(1).min(self.len());
        let cell = cell.max(1);
        let rows = self.len().div_ceil(columns);
        let tile = self.k * cell;
        let (h, w) = (rows * (tile + 1) + 1, columns * (tile + 1) + 1);
        let mut px = vec![0.5; h * w];
        for (i, basis) in self.bases.iter().enumerate() {
            let (r, c) = (i / columns, i % columns);
            let (y0, x0) = (1 + r * (tile + 1), 1 + c * (tile + 1));
            let norm = basis.display_normalized();
            for y in 0..tile {
                for x in 0..tile {
                    px[(y0 + y) * w + x0 + x] = norm[(y / cell) * self.k + x / cell];
                }
            }
        }
        Image::gray(h, w, px)
    }
}

struct Candidate {
    kernel: FilterKernel,
    spec: BasisSpec,
    group: Option<usize>,
}

pub fn build_dictionary(config: &DictionaryConfig) -> Result<Dictionary> {
    let k = config.k;
    check_size(k)?;
    if config.l == 0 {
        return Err(invalid!("dictionary size L must be positive"));
    }
    if !(config.theta_step_degrees > 0.0 && config.theta_step_degrees <= 180.0) {
        return Err(invalid!("theta_step_degrees must lie in (0, 180]"));
    }
    let mut cands: Vec<Candidate> = Vec::new();
    if config.ratios.contains(&1.0) {
        for &g in &config.gammas {
            let spec = GaussianSpec::isotropic(g);
            cands.push(Candidate {
                kernel: gaussian_kernel(&spec, k)?,
                spec: BasisSpec::Gaussian(spec),
                group: None,
            });
        }
    }
    for &[ga, gb] in &config.dog_pairs {
        let (a, b) = (GaussianSpec::isotropic(ga), GaussianSpec::isotropic(gb));
        let kernel = match config.dog_mode {
            DogMode::Delta => dog_kernel(&a, &b, k)?,
            DogMode::Raw => FilterKernel::new(k, dog_difference(&a, &b, k)?)?,
        };
        cands.push(Candidate {
            kernel,
            spec: BasisSpec::Dog { a, b },
            group: None,
        });
    }
    let steps = (180.0 / config.theta_step_degrees).round() as usize;
    let mut group = 0;
    for &r in config.ratios.iter().filter(|&&r| r != 1.0) {
        for &g in &config.gammas {
            for t in 0..steps {
                let theta = (t as f64 * config.theta_step_degrees).to_radians();
                let spec = GaussianSpec::anisotropic(g, r, theta);
                cands.push(Candidate {
                    kernel: gaussian_kernel(&spec, k)?,
                    spec: BasisSpec::Gaussian(spec),
                    group: Some(group),
                });
            }
            group += 1;
        }
    }
    if cands.len() < config.l {
        return Err(invalid!(
            "parameter grid yields {} filters but L = {} was declared",
            cands.len(),
            config.l
        ));
    }
    let mut excess = cands.len() - config.l;
    let mut drop = vec![false; cands.len()];
    for g in (0..group).rev() {
        if excess == 0 {
            break;
        }
        let members: Vec<usize> = (0..cands.len()).filter(|&i| cands[i].group == Some(g)).collect();
        for &i in members.iter().skip(1).step_by(2) {
            if excess == 0 {
                break;
            }
            drop[i] = true;
            excess -= 1;
        }
    }
    if excess > 0 {
        return Err(invalid!(
            "parameter grid yields {} filters; cannot trim to L = {}",
            cands.len(),
            config.l
        ));
    }
    let (bases, specs) = cands
        .into_iter()
        .zip(drop)
        .filter(|(_, d)| !d)
        .map(|(c, _)| (c.kernel, c.spec))
        .unzip();
    Dictionary::from_parts(config.name(), bases, specs)
}

/// Filters with i.i.d. uniform(-1, 1) taps, each shifted to sum to one.
pub fn random_dictionary(seed: u64, l: usize, k: usize) -> Result<Dictionary> {
    check_size(k)?;
    if l == 0 {
        return Err(invalid!("dictionary size L must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k * k;
    let mut bases = Vec::with_capacity(l);
    for _ in 0..l {
        let mut taps: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = (1.0 - taps.iter().sum::<f64>()) / n as f64;
        taps.iter_mut().for_each(|t| *t += shift);
        bases.push(FilterKernel::new(k, taps)?);
    }
    Dictionary::from_parts(format!("Random-{l}"), bases, vec![BasisSpec::Random; l])
}

/// Angle modulo `π`, in `[0, π)`.
fn wrap_angle(theta: f64) -> f64 {
    let r = theta % PI;
    let r = if r < 0.0 { r + PI } else { r };
    if r >= PI {
        0.0
    } else {
        r
    }
}

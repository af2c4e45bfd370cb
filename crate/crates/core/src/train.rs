//! Training: Charbonnier loss, cosine schedule, Adam, batch sampling,
//! the optimisation loop and evaluation against the interpolation baseline.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{image_responses, predict_basisconv, CoefficientMap};
use crate::dictionary::{Dictionary, GaussianSpec};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::metrics::{compare, luma, psnr, MetricReport};
use crate::net::{ModelConfig, ModelState, Task};
use crate::resample::{
    add_gaussian_noise, bicubic_resize_to, default_blur, degrade, simulate_blocking, Degradation, Padding,
};
use crate::tensor::{Tape, Tensor, Var};
use crate::Real;

/// Charbonnier penalty, `mean(sqrt((pred - target)² + eps²))`.
pub fn charbonnier_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var, eps: T) -> Result<Var> {
    tape.charbonnier(pred, target, eps)
}

/// `lr_final + ½ (lr_init - lr_final)(1 + cos(π · iter / total))`.
pub fn cosine_lr(iter: usize, total: usize, lr_init: f64, lr_final: f64) -> f64 {
    if total == 0 {
        return lr_init;
    }
    let t = iter.min(total) as f64 / total as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (PI * t).cos())
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_model(model: &ModelState<T>) -> Self {
        let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.numel()).collect();
        Self::new(&sizes)
    }

    /// Restores moments and the step counter, e.g. from a checkpoint.
    pub fn from_state(step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(invalid!("adam moment buffers disagree in shape"));
        }
        Ok(Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step,
            m,
            v,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// One update of `params` in place. A non-finite gradient aborts the
    /// step before anything is modified.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(invalid!("adam buffer {i} does not match its parameter"));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
            }
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps) = (T::one(), T::of(self.eps));
        let bc1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::of(lr);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// How training inputs are produced from clean images.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskSpec {
    /// Blur then decimate by `scale`.
    Sr { scale: usize, blur: Option<GaussianSpec> },
    /// Noise standard deviation drawn uniformly per sample from
    /// `[lo, hi]` (intensity units, i.e. already divided by 255).
    Denoise { sigma_range: (f64, f64) },
    /// Block quantisation quality drawn uniformly per sample from `[lo, hi]`.
    Deblock { quality_range: (u32, u32) },
}

impl TaskSpec {
    pub fn default_for(task: Task, scale: usize) -> Self {
        match task {
            Task::Sr => TaskSpec::Sr {
                scale,
                blur: Some(default_blur(scale)),
            },
            Task::Denoise => TaskSpec::Denoise {
                sigma_range: (0.0, 55.0 / 255.0),
            },
            Task::Deblock => TaskSpec::Deblock {
                quality_range: (20, 50),
            },
        }
    }

    pub fn task(&self) -> Task {
        match self {
            TaskSpec::Sr { .. } => Task::Sr,
            TaskSpec::Denoise { .. } => Task::Denoise,
            TaskSpec::Deblock { .. } => Task::Deblock,
        }
    }

    pub fn scale(&self) -> usize {
        match self {
            TaskSpec::Sr { scale, .. } => *scale,
            _ => 1,
        }
    }

    /// Draws the per-sample degradation.
    pub fn draw(&self, rng: &mut impl Rng) -> Degradation {
        match self {
            TaskSpec::Sr { scale, blur } => Degradation::Sr {
                scale: *scale,
                blur: *blur,
            },
            TaskSpec::Denoise { sigma_range: (lo, hi) } => Degradation::Denoise {
                sigma: if hi > lo { rng.random_range(*lo..=*hi) } else { *lo },
            },
            TaskSpec::Deblock {
                quality_range: (lo, hi),
            } => Degradation::Deblock {
                quality: if hi > lo { rng.random_range(*lo..=*hi) } else { *lo },
            },
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TaskSpec::Sr { scale, .. } if *scale == 0 => Err(invalid!("scale must be positive")),
            TaskSpec::Denoise { sigma_range: (lo, hi) } if !(*lo >= 0.0 && hi >= lo) => {
                Err(invalid!("noise range must satisfy 0 <= lo <= hi"))
            }
            TaskSpec::Deblock {
                quality_range: (lo, hi),
            } if !(*lo >= 1 && hi >= lo && *hi <= 100) => {
                Err(invalid!("quality range must satisfy 1 <= lo <= hi <= 100"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub task: TaskSpec,
    pub batch_size: usize,
    pub total_iters: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    /// Side of the target crop (output resolution).
    pub patch: usize,
    pub seed: u64,
    pub eps_charbonnier: f64,
    pub augment: bool,
    /// Validation cadence in iterations; 0 disables periodic validation.
    pub val_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.task.validate()?;
        if self.task.task() != self.model.task || self.task.scale() != self.model.scale {
            return Err(invalid!("task settings disagree with the model config"));
        }
        if self.batch_size == 0 || self.patch == 0 {
            return Err(invalid!("batch size and patch must be positive"));
        }
        if !self.patch.is_multiple_of(self.model.scale) {
            return Err(invalid!(
                "patch {} not divisible by scale {}",
                self.patch,
                self.model.scale
            ));
        }
        if self.patch / self.model.scale < self.model.kernel_size {
            return Err(invalid!("input patch smaller than the kernel size"));
        }
        if !(self.lr_final < self.lr_init) {
            return Err(invalid!("lr_final must be below lr_init"));
        }
        if !(self.eps_charbonnier > 0.0) {
            return Err(invalid!("charbonnier eps must be positive"));
        }
        Ok(())
    }
}

/// Crop and augmentation applied to one training sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augmentation {
    pub top: usize,
    pub left: usize,
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: usize,
}

impl Augmentation {
    pub fn apply<T: Real>(&self, img: &Image<T>) -> Image<T> {
        let mut out = img.clone();
        if self.flip_h {
            out = out.flip_horizontal();
        }
        if self.flip_v {
            out = out.flip_vertical();
        }
        out.rotate90(self.quarter_turns)
    }
}

/// Degraded input, clean target and the image the filters act on.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair<T = f64> {
    pub input: Image<T>,
    pub target: Image<T>,
    /// Bicubic upsampling of `input` for SR, `input` itself otherwise.
    pub source: Image<T>,
    pub augmentation: Augmentation,
    pub degradation: Degradation,
}

impl<T: Real> SamplePair<T> {
    pub fn from_parts(input: Image<T>, target: Image<T>, degradation: Degradation) -> Result<Self> {
        let s = degradation.scale();
        if (input.height() * s, input.width() * s) != (target.height(), target.width()) {
            return Err(invalid!(
                "input {}x{} at scale {s} does not match target {}x{}",
                input.height(),
                input.width(),
                target.height(),
                target.width()
            ));
        }
        let source = if s == 1 {
            input.clone()
        } else {
            bicubic_resize_to(&input, target.height(), target.width())?
        };
        Ok(Self {
            input,
            target,
            source,
            augmentation: Augmentation::default(),
            degradation,
        })
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded RNG for sample `index` of batch `iter`.
pub fn sample_rng(seed: u64, iter: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, iter, index))
}

/// Clean training images with the plane count the model consumes.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Vec<Image>,
}

impl Dataset {
    /// Colour images are reduced to luma when `colors == 1`.
    pub fn new(images: Vec<Image>, colors: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(images.len());
        for img in images {
            out.push(match (colors, img.channels()) {
                (1, 3) => luma(&img)?,
                (c, ic) if c == ic => img,
                (c, ic) => return Err(invalid!("model wants {c} plane(s), image has {ic}")),
            });
        }
        Ok(Self { images: out })
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Builds one sample: random scale-aligned crop, optional flips and
/// quarter-turn rotation of the clean crop, then the degradation.
///
/// Augmenting before degrading keeps the input/target alignment of the
/// degradation model identical for every sample.
pub fn make_sample<T: Real>(
    img: &Image,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Option<SamplePair<T>>> {
    let s = cfg.model.scale;
    let p = cfg.patch;
    if img.height() < p || img.width() < p {
        return Ok(None);
    }
    let top = rng.random_range(0..=(img.height() - p) / s) * s;
    let left = rng.random_range(0..=(img.width() - p) / s) * s;
    let mut aug = Augmentation {
        top,
        left,
        ..Default::default()
    };
    if cfg.augment {
        aug.flip_h = rng.random_bool(0.5);
        aug.flip_v = rng.random_bool(0.5);
        aug.quarter_turns = rng.random_range(0..4);
    }
    let crop = aug.apply(&img.crop(top, left, p, p)?);
    let degradation = cfg.task.draw(rng);
    let input = degrade(&crop, &degradation, seed)?;
    let mut pair = SamplePair::from_parts(input.cast::<T>(), crop.cast::<T>(), degradation)?;
    pair.augmentation = aug;
    Ok(Some(pair))
}

/// Batch `iter`: sample `b` draws its image, crop, augmentation and
/// degradation from [`sample_rng`]`(seed, iter, b)`, so a batch depends only
/// on `(seed, iter)`. Images smaller than the patch are skipped.
pub fn sample_batch<T: Real>(dataset: &Dataset, cfg: &TrainConfig, iter: u64) -> Result<Vec<SamplePair<T>>> {
    if dataset.is_empty() {
        return Err(invalid!("empty dataset"));
    }
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut attempt = 0u64;
    while batch.len() < cfg.batch_size {
        if attempt >= (cfg.batch_size as u64) * 16 {
            return Err(invalid!("no image is at least {}x{}", cfg.patch, cfg.patch));
        }
        let mut rng = sample_rng(cfg.seed, iter, attempt);
        let idx = rng.random_range(0..dataset.len());
        let noise_seed = mix(cfg.seed ^ 0x5eed, iter, attempt);
        if let Some(pair) = make_sample(&dataset.images[idx], cfg, &mut rng, noise_seed)? {
            batch.push(pair);
        }
        attempt += 1;
    }
    Ok(batch)
}

/// Full-image pairs for validation and evaluation; sample `i` draws its
/// degradation level from a RNG seeded by `(seed, i)`.
pub fn prepare_task_data(images: &[Image], task: &TaskSpec, seed: u64) -> Result<Vec<SamplePair>> {
    task.validate()?;
    let s = task.scale();
    let mut out = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let clean = img.crop_to_multiple(s)?;
        let mut rng = sample_rng(seed, u64::MAX, i as u64);
        let degradation = task.draw(&mut rng);
        let input = degrade(&clean, &degradation, mix(seed, i as u64, 0xd1ce))?;
        out.push(SamplePair::from_parts(input, clean, degradation)?);
    }
    Ok(out)
}

/// Noisy pair at a fixed noise level, for evaluation at one sigma.
pub fn noisy_pair(clean: &Image, sigma: f64, seed: u64) -> Result<SamplePair> {
    SamplePair::from_parts(
        add_gaussian_noise(clean, sigma, seed)?,
        clean.clone(),
        Degradation::Denoise { sigma },
    )
}

/// Blocked pair at a fixed quality.
pub fn blocked_pair(clean: &Image, quality: u32) -> Result<SamplePair> {
    SamplePair::from_parts(
        simulate_blocking(clean, quality)?,
        clean.clone(),
        Degradation::Deblock { quality },
    )
}

/// Model, optimiser and iteration counter; everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub model: ModelState<T>,
    pub adam: Adam<T>,
    /// Iterations completed.
    pub iter: usize,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: ModelState<T>) -> Self {
        let adam = Adam::for_model(&model);
        Self { model, adam, iter: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

fn stack<T: Real>(images: impl Iterator<Item = Vec<T>>, shape: [usize; 4]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(shape.iter().product());
    for px in images {
        data.extend(px);
    }
    Tensor::new(&shape, data)
}

/// Loss and parameter gradients of one batch.
pub fn batch_gradients<T: Real>(
    model: &ModelState<T>,
    dict: &Dictionary,
    batch: &[SamplePair<T>],
    eps: f64,
) -> Result<(f64, Vec<Vec<T>>)> {
    let first = batch.first().ok_or_else(|| invalid!("empty batch"))?;
    let n = batch.len();
    let c = first.input.channels();
    let (h, w) = (first.input.height(), first.input.width());
    let (th, tw) = (first.target.height(), first.target.width());
    let l = dict.len();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let x = tape.leaf(stack(batch.iter().map(|p| p.input.pixels().to_vec()), [n, c, h, w])?);
    let phi = model.forward(&mut tape, &bound, x)?;
    let resp = stack(
        batch
            .iter()
            .map(|p| image_responses(&p.source, dict, Padding::Reflect101)),
        [n, c * l, th, tw],
    )?;
    let resp = tape.leaf(resp);
    let pred = tape.basis_combine(phi, resp)?;
    let target = tape.leaf(stack(batch.iter().map(|p| p.target.pixels().to_vec()), [n, c, th, tw])?);
    let loss = charbonnier_loss(&mut tape, pred, target, T::of(eps))?;
    let loss_value = tape.value(loss).data()[0].f64();
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    tape.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(<[T]>::to_vec)
                .unwrap_or_else(|| vec![T::zero(); tape.value(v).numel()])
        })
        .collect();
    Ok((loss_value, grads))
}

/// One optimisation step on `batch` at the scheduled learning rate.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
    dict: &Dictionary,
    batch: &[SamplePair<T>],
) -> Result<LogRow> {
    let lr = cosine_lr(state.iter, cfg.total_iters, cfg.lr_init, cfg.lr_final);
    let (loss, grads) = batch_gradients(&state.model, dict, batch, cfg.eps_charbonnier)?;
    let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
    let mut params: Vec<&mut [T]> = state.model.params_mut().map(|(_, t)| t.data_mut()).collect();
    state.adam.step(&mut params, &grad_refs, lr)?;
    state.iter += 1;
    Ok(LogRow {
        iter: state.iter,
        lr,
        loss,
        val_psnr: None,
    })
}

/// Filter output for one pair.
pub fn restore<T: Real>(model: &ModelState<T>, dict: &Dictionary, pair: &SamplePair<T>) -> Result<Image<T>> {
    let phi: CoefficientMap<T> = model.infer(&pair.input)?;
    predict_basisconv(&pair.source, &phi, dict, Padding::Reflect101)
}

/// Evaluation border: `scale` pixels for SR, none otherwise.
pub fn eval_border(task: Task, scale: usize) -> usize {
    if task == Task::Sr {
        scale
    } else {
        0
    }
}

/// Mean luma PSNR of the model over `pairs`.
pub fn validation_psnr<T: Real>(model: &ModelState<T>, dict: &Dictionary, pairs: &[SamplePair<T>]) -> Result<f64> {
    let border = eval_border(model.config().task, model.config().scale);
    let mut total = 0.0;
    for p in pairs {
        let out = restore(model, dict, p)?.clamped();
        total += psnr(&luma(&out)?, &luma(&p.target)?, border)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Mean luma PSNR of the baseline (bicubic for SR, the degraded input
/// otherwise).
pub fn baseline_psnr<T: Real>(pairs: &[SamplePair<T>], border: usize) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        total += psnr(&luma(&p.source)?, &luma(&p.target)?, border)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Runs iterations `state.iter .. cfg.total_iters`.
///
/// `on_step` sees the state after every iteration (for checkpoints and
/// logs); returning an error stops training. On a non-finite loss or
/// gradient the function returns the error and `state` still holds the
/// last good parameters.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    dataset: &Dataset,
    dict: &Dictionary,
    validation: &[SamplePair<T>],
    state: &mut TrainState<T>,
    mut on_step: impl FnMut(&TrainState<T>, &LogRow) -> Result<()>,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if dict.len() != cfg.model.basis_count || dict.kernel_size() != cfg.model.kernel_size {
        return Err(invalid!(
            "dictionary ({} bases of {}x{}) does not match the model (L = {}, k = {})",
            dict.len(),
            dict.kernel_size(),
            dict.kernel_size(),
            cfg.model.basis_count,
            cfg.model.kernel_size
        ));
    }
    if state.model.config() != &cfg.model {
        return Err(invalid!("model state was built for a different config"));
    }
    let mut log = Vec::with_capacity(cfg.total_iters.saturating_sub(state.iter));
    while state.iter < cfg.total_iters {
        let batch = sample_batch::<T>(dataset, cfg, state.iter as u64)?;
        let mut row = train_step(state, cfg, dict, &batch)?;
        let last = state.iter == cfg.total_iters;
        if !validation.is_empty() && cfg.val_every > 0 && (state.iter.is_multiple_of(cfg.val_every) || last) {
            row.val_psnr = Some(validation_psnr(&state.model, dict, validation)?);
        }
        on_step(state, &row)?;
        log.push(row);
    }
    Ok(log)
}

/// One line of an evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub method: String,
    pub report: MetricReport,
}

/// Per-image PSNR/SSIM of the model and of the baseline, followed by a
/// `mean` row for each.
pub fn evaluate<T: Real>(
    model: &ModelState<T>,
    dict: &Dictionary,
    pairs: &[SamplePair<T>],
    names: &[String],
) -> Result<Vec<EvalRow>> {
    let cfg = model.config();
    let border = eval_border(cfg.task, cfg.scale);
    let baseline = match cfg.task {
        Task::Sr => "bicubic",
        _ => "input",
    };
    let mut rows = Vec::new();
    let mut sums = [(0.0, 0.0); 2];
    for (i, p) in pairs.iter().enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| format!("{i}"));
        let out = restore(model, dict, p)?.clamped();
        for (j, (method, img)) in [("lapar", &out), (baseline, &p.source)].into_iter().enumerate() {
            let report = compare(img, &p.target, border)?;
            sums[j].0 += report.psnr_db;
            sums[j].1 += report.ssim;
            rows.push(EvalRow {
                image: name.clone(),
                method: method.to_string(),
                report,
            });
        }
    }
    let n = pairs.len().max(1) as f64;
    let channel = rows
        .first()
        .map(|r| r.report.channel)
        .unwrap_or(crate::metrics::MetricChannel::Gray);
    for (j, method) in ["lapar", baseline].into_iter().enumerate() {
        rows.push(EvalRow {
            image: "mean".into(),
            method: method.to_string(),
            report: MetricReport {
                psnr_db: sums[j].0 / n,
                ssim: sums[j].1 / n,
                border_crop: border,
                channel,
            },
        });
    }
    Ok(rows)
}

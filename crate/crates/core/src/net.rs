//! The coefficient predictor.
//!
//! Layout (every convolution is weight-normalised, zero-padded, stride 1):
//!
//! ```text
//! head      3x3  colors -> C
//! body      M local fusion blocks; block input x0:
//!             y_i = lrelu(conv3x3(concat(x0, y_1 .. y_{i-1}))) -> C,  i = 1..4
//!             out = x0 + conv1x1(concat(x0, y_1 .. y_4))
//!           followed by a global skip from the head output
//! tail.up   3x3  C -> C·s², pixel shuffle (skipped for s = 1), lrelu
//! tail.refine 3x3 C -> C at output resolution, lrelu
//! tail.out  3x3  C -> L  (the coefficients Φ)
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assembly::CoefficientMap;
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::tensor::{Tape, Tensor, Var};
use crate::Real;

pub const LEAKY_SLOPE: f64 = 0.1;
/// Convolutions per local fusion block, before the 1x1 fusion.
pub const BLOCK_CONVS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Task {
    #[default]
    Sr,
    Denoise,
    Deblock,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sr => "sr",
            Task::Denoise => "denoise",
            Task::Deblock => "deblock",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sr" => Ok(Task::Sr),
            "denoise" => Ok(Task::Denoise),
            "deblock" => Ok(Task::Deblock),
            _ => Err(invalid!("unknown task {s:?} (expected sr, denoise or deblock)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Feature channels `C`.
    pub channels: usize,
    /// Local fusion blocks `M`.
    pub blocks: usize,
    /// Dictionary size `L`.
    pub basis_count: usize,
    /// Dictionary kernel size `k`.
    pub kernel_size: usize,
    pub scale: usize,
    pub task: Task,
    /// Input colour planes (1 for luma/gray models, 3 for RGB).
    pub colors: usize,
}

impl ModelConfig {
    fn preset(channels: usize, blocks: usize, scale: usize) -> Self {
        Self {
            channels,
            blocks,
            basis_count: 72,
            kernel_size: 5,
            scale,
            task: Task::Sr,
            colors: 3,
        }
    }

    /// C = 32, M = 4.
    pub fn lapar_a(scale: usize) -> Self {
        Self::preset(32, 4, scale)
    }

    /// C = 24, M = 3.
    pub fn lapar_b(scale: usize) -> Self {
        Self::preset(24, 3, scale)
    }

    /// C = 16, M = 2.
    pub fn lapar_c(scale: usize) -> Self {
        Self::preset(16, 2, scale)
    }

    pub fn named(name: &str, scale: usize) -> Result<Self> {
        match name.to_ascii_uppercase().trim_start_matches("LAPAR-") {
            "A" => Ok(Self::lapar_a(scale)),
            "B" => Ok(Self::lapar_b(scale)),
            "C" => Ok(Self::lapar_c(scale)),
            _ => Err(invalid!("unknown preset {name:?} (expected A, B or C)")),
        }
    }

    /// Same network for a restoration task at scale 1.
    pub fn for_task(mut self, task: Task) -> Self {
        self.task = task;
        if task != Task::Sr {
            self.scale = 1;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.basis_count == 0 {
            return Err(invalid!("channels and basis count must be positive"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(invalid!("kernel size must be odd, got {}", self.kernel_size));
        }
        if !(1..=4).contains(&self.scale) {
            return Err(invalid!("scale must be 1, 2, 3 or 4, got {}", self.scale));
        }
        if self.task != Task::Sr && self.scale != 1 {
            return Err(invalid!(
                "{} models run at scale 1, got {}",
                self.task.as_str(),
                self.scale
            ));
        }
        if self.colors != 1 && self.colors != 3 {
            return Err(invalid!("colors must be 1 or 3, got {}", self.colors));
        }
        Ok(())
    }

    /// `key = value` lines, the form stored in checkpoints.
    pub fn to_text(&self) -> String {
        format!(
            "channels = {}\nblocks = {}\nbasis_count = {}\nkernel_size = {}\nscale = {}\ntask = \"{}\"\ncolors = {}\n",
            self.channels,
            self.blocks,
            self.basis_count,
            self.kernel_size,
            self.scale,
            self.task.as_str(),
            self.colors
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::lapar_c(2);
        let mut seen = 0u8;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid!("malformed config line {line:?}"))?;
            let (key, value) = (key.trim(), value.trim().trim_matches('"'));
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| invalid!("{key}: not an integer: {value:?}"))
            };
            match key {
                "channels" => cfg.channels = num()?,
                "blocks" => cfg.blocks = num()?,
                "basis_count" => cfg.basis_count = num()?,
                "kernel_size" => cfg.kernel_size = num()?,
                "scale" => cfg.scale = num()?,
                "colors" => cfg.colors = num()?,
                "task" => cfg.task = Task::parse(value)?,
                _ => return Err(invalid!("unknown model config key {key:?}")),
            }
            seen += 1;
        }
        if seen != 7 {
            return Err(invalid!("model config needs 7 keys, found {seen}"));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One weight-normalised convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// Runs at output (high) resolution.
    pub at_output_res: bool,
}

/// All convolution layers in execution order.
pub fn layer_specs(cfg: &ModelConfig) -> Vec<LayerSpec> {
    let c = cfg.channels;
    let spec = |name: String, cin, cout, k, hr| LayerSpec {
        name,
        cin,
        cout,
        k,
        at_output_res: hr,
    };
    let mut v = Vec::new();
    v.push(spec("head".into(), cfg.colors, c, 3, false));
    for b in 0..cfg.blocks {
        for i in 0..BLOCK_CONVS {
            v.push(spec(format!("body.{b}.conv{i}"), c * (i + 1), c, 3, false));
        }
        v.push(spec(format!("body.{b}.fuse"), c * (BLOCK_CONVS + 1), c, 1, false));
    }
    v.push(spec("tail.up".into(), c, c * cfg.scale * cfg.scale, 3, false));
    v.push(spec("tail.refine".into(), c, c, 3, true));
    v.push(spec("tail.out".into(), c, cfg.basis_count, 3, true));
    v
}

/// Exact trainable parameter count (direction, gain and bias of every layer).
pub fn count_params(cfg: &ModelConfig) -> usize {
    layer_specs(cfg)
        .iter()
        .map(|l| l.cout * l.cin * l.k * l.k + 2 * l.cout)
        .sum()
}

/// Multiply-adds of one `k x k` convolution producing `h x w` outputs.
pub fn conv_multiadds(cin: usize, cout: usize, k: usize, h: usize, w: usize) -> u64 {
    (cin * cout * k * k) as u64 * (h * w) as u64
}

/// Multiply-adds to produce one `out_h x out_w` output: every convolution at
/// its own resolution, plus the filtering stage (`L` basis correlations of
/// `k²` taps and the `L`-term combination per output pixel and colour).
/// Bicubic upsampling is not counted.
pub fn count_multiadds(cfg: &ModelConfig, out_h: usize, out_w: usize) -> u64 {
    let (lh, lw) = (out_h / cfg.scale, out_w / cfg.scale);
    let convs: u64 = layer_specs(cfg)
        .iter()
        .map(|l| {
            let (h, w) = if l.at_output_res { (out_h, out_w) } else { (lh, lw) };
            conv_multiadds(l.cin, l.cout, l.k, h, w)
        })
        .sum();
    let k2 = cfg.kernel_size * cfg.kernel_size;
    let filtering = (out_h * out_w * cfg.colors) as u64 * (cfg.basis_count * (k2 + 1)) as u64;
    convs + filtering
}

/// Network parameters keyed by stable layer paths, e.g. `body.0.conv2.gain`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    config: ModelConfig,
    params: Vec<(String, Tensor<T>)>,
}

/// Parameters recorded on a tape, in [`ModelState::params`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Names and shapes the parameters of `cfg` must have.
pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    for l in layer_specs(cfg) {
        v.push((format!("{}.direction", l.name), alloc::vec![l.cout, l.cin, l.k, l.k]));
        v.push((format!("{}.gain", l.name), alloc::vec![l.cout]));
        v.push((format!("{}.bias", l.name), alloc::vec![l.cout]));
    }
    v
}

/// Output-layer gain relative to its direction norm at initialisation.
pub const OUT_GAIN_SCALE: f64 = 1e-2;

/// He-initialised model. Gains start at the direction norms (so the initial
/// effective weights equal the directions); biases start at zero. The output
/// layer is the exception: bias `1/L` and a gain shrunk by
/// [`OUT_GAIN_SCALE`], so the first prediction is close to the mean basis.
pub fn build_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelState<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for l in layer_specs(config) {
        let fan_in = (l.cin * l.k * l.k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let per = l.cin * l.k * l.k;
        let dir: Vec<T> = (0..l.cout * per)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(z * std)
            })
            .collect();
        let is_out = l.name == "tail.out";
        let shrink = T::of(if is_out { OUT_GAIN_SCALE } else { 1.0 });
        let gain: Vec<T> = dir
            .chunks(per)
            .map(|row| shrink * row.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let bias_value = if is_out { 1.0 / config.basis_count as f64 } else { 0.0 };
        params.push((
            format!("{}.direction", l.name),
            Tensor::new(&[l.cout, l.cin, l.k, l.k], dir)?,
        ));
        params.push((format!("{}.gain", l.name), Tensor::new(&[l.cout], gain)?));
        params.push((format!("{}.bias", l.name), Tensor::full(&[l.cout], T::of(bias_value))));
    }
    Ok(ModelState {
        config: config.clone(),
        params,
    })
}

impl<T: Real> ModelState<T> {
    /// Assembles a state from named tensors, checking names and shapes
    /// against `config`.
    pub fn from_params(config: ModelConfig, params: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = expected_shapes(&config);
        if expected.len() != params.len() {
            return Err(invalid!(
                "config implies {} parameter tensors, found {}",
                expected.len(),
                params.len()
            ));
        }
        for ((name, shape), (pname, t)) in expected.iter().zip(&params) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "model parameters vs config",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            params: self.params.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Records every parameter as a leaf; `trainable` controls gradient tracking.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| {
                let mut t = t.clone();
                if trainable {
                    t = t.with_grad();
                }
                tape.leaf(t)
            })
            .collect();
        BoundParams { vars }
    }

    /// Maps `[N, colors, h, w]` to coefficients `[N, L, s·h, s·w]`.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &BoundParams, input: Var) -> Result<Var> {
        let cfg = &self.config;
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 4 || shape[1] != cfg.colors {
            return Err(invalid!(
                "network input must be [N, {}, H, W], got {:?}",
                cfg.colors,
                shape
            ));
        }
        if shape[2] < cfg.kernel_size || shape[3] < cfg.kernel_size {
            return Err(invalid!(
                "input {}x{} is smaller than the kernel size {}",
                shape[2],
                shape[3],
                cfg.kernel_size
            ));
        }
        let slope = T::of(LEAKY_SLOPE);
        let mut layer = 0usize;
        let mut conv = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
            let v = &bound.vars[3 * layer..3 * layer + 3];
            let k = tape.value(v[0]).shape()[2];
            layer += 1;
            tape.weight_norm_conv2d(x, v[0], v[1], Some(v[2]), 1, k / 2)
        };
        let feat = conv(tape, input)?;
        let mut h = feat;
        for _ in 0..cfg.blocks {
            let x0 = h;
            let mut feats = alloc::vec![x0];
            for i in 0..BLOCK_CONVS {
                let inp = if i == 0 { x0 } else { tape.concat_channels(&feats)? };
                let y = conv(tape, inp)?;
                feats.push(tape.leaky_relu(y, slope)?);
            }
            let all = tape.concat_channels(&feats)?;
            let fused = conv(tape, all)?;
            h = tape.add(x0, fused)?;
        }
        if cfg.blocks > 0 {
            h = tape.add(h, feat)?;
        }
        let mut u = conv(tape, h)?;
        if cfg.scale > 1 {
            u = tape.pixel_shuffle(u, cfg.scale)?;
        }
        u = tape.leaky_relu(u, slope)?;
        let r = conv(tape, u)?;
        let r = tape.leaky_relu(r, slope)?;
        conv(tape, r)
    }

    /// Coefficients for one input image (no gradient tracking).
    pub fn infer(&self, input: &Image<T>) -> Result<CoefficientMap<T>> {
        if input.channels() != self.config.colors {
            return Err(invalid!(
                "model expects {} colour plane(s), image has {}",
                self.config.colors,
                input.channels()
            ));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.leaf(Tensor::new(
            &[1, input.channels(), input.height(), input.width()],
            input.pixels().to_vec(),
        )?);
        let phi = self.forward(&mut tape, &bound, x)?;
        let out = CoefficientMap::from_tensor(tape.value(phi), 0)?;
        if !tape.value(phi).all_finite() {
            return Err(Error::NonFinite("network output".to_string()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: 4,
            blocks: 1,
            basis_count: 5,
            kernel_size: 3,
            scale: 2,
            task: Task::Sr,
            colors: 1,
        }
    }

    #[test]
    fn preset_parameter_counts() {
        for s in 1..=4 {
            let (a, b, c) = (
                count_params(&ModelConfig::lapar_a(s)),
                count_params(&ModelConfig::lapar_b(s)),
                count_params(&ModelConfig::lapar_c(s)),
            );
            assert!(a > b && b > c, "scale {s}: {a} {b} {c}");
        }
        for (cfg, reference) in [
            (ModelConfig::lapar_a(2), 548_000.0),
            (ModelConfig::lapar_b(2), 250_000.0),
            (ModelConfig::lapar_c(2), 87_000.0),
        ] {
            let n = count_params(&cfg) as f64;
            assert!(n >= reference / 2.0 && n <= reference * 2.0, "{n} vs {reference}");
            assert_eq!(build_model::<f32>(&cfg, 0).unwrap().num_params(), count_params(&cfg));
        }
    }

    #[test]
    fn multiadds_by_hand() {
        assert_eq!(conv_multiadds(1, 1, 3, 10, 10), 900);
        let cfg = tiny();
        let (c, l) = (4u64, 5u64);
        let lr = 8 * 8u64;
        let hr = 16 * 16u64;
        let body = (c * c + 2 * c * c + 3 * c * c + 4 * c * c) * 9 * lr + 5 * c * c * lr;
        let expected = 9 * c * lr + body + c * 4 * c * 9 * lr + c * c * 9 * hr + c * l * 9 * hr + hr * l * 10;
        assert_eq!(count_multiadds(&cfg, 16, 16), expected);
    }

    #[test]
    fn forward_shape_contract() {
        let cfg = ModelConfig {
            colors: 1,
            ..ModelConfig::lapar_c(2)
        };
        let m = build_model::<f32>(&cfg, 1).unwrap();
        let img = Image::constant(16, 16, 0.5f32);
        let phi = m.infer(&img).unwrap();
        assert_eq!((phi.height(), phi.width(), phi.basis_count()), (32, 32, 72));
        assert_eq!(phi, m.infer(&img).unwrap());
        assert!(m.infer(&Image::constant(4, 4, 0.5f32)).is_err());
        assert!(m.infer(&Image::constant(3, 16, 0.5f32)).is_err());
        let rgb = Image::from_planes(&[img.clone(), img.clone(), img], crate::image::ColorSpace::Rgb).unwrap();
        assert!(m.infer(&rgb).is_err());
    }

    #[test]
    fn restoration_models_keep_resolution() {
        let cfg = tiny().for_task(Task::Denoise);
        assert_eq!(cfg.scale, 1);
        let m = build_model::<f64>(&cfg, 2).unwrap();
        let phi = m.infer(&Image::constant(9, 7, 0.3)).unwrap();
        assert_eq!((phi.height(), phi.width()), (9, 7));
        assert!(layer_specs(&cfg).iter().all(|l| l.name != "tail.up" || l.cout == 4));
    }

    #[test]
    fn seeding_is_reproducible() {
        let a = build_model::<f64>(&tiny(), 5).unwrap();
        assert_eq!(a, build_model::<f64>(&tiny(), 5).unwrap());
        assert_ne!(a, build_model::<f64>(&tiny(), 6).unwrap());
        let b = build_model::<f32>(&tiny(), 5).unwrap();
        for ((n, p), (_, q)) in a.cast::<f32>().params().iter().zip(b.params()) {
            if n.ends_with("direction") {
                assert_eq!(p, q);
            }
        }
    }

    #[test]
    fn initial_prediction_is_near_mean_basis() {
        let cfg = tiny();
        let m = build_model::<f64>(&cfg, 3).unwrap();
        let phi = m
            .infer(&Image::from_fn(6, 6, |y, x| ((y * 7 + x * 3) % 5) as f64 / 5.0))
            .unwrap();
        for v in phi.data() {
            assert!((v - 0.2).abs() < 0.1, "{v}");
        }
    }

    #[test]
    fn from_params_checks_layout() {
        let m = build_model::<f64>(&tiny(), 0).unwrap();
        let mut p = m.params().to_vec();
        assert!(ModelState::from_params(tiny(), p.clone()).is_ok());
        let other = ModelConfig { channels: 5, ..tiny() };
        assert!(ModelState::from_params(other, p.clone()).is_err());
        p.swap(0, 1);
        assert!(ModelState::from_params(tiny(), p.clone()).is_err());
        p.pop();
        assert!(ModelState::from_params(tiny(), p).is_err());
    }

    #[test]
    fn config_validation_and_names() {
        assert!(ModelConfig { scale: 5, ..tiny() }.validate().is_err());
        assert!(ModelConfig {
            kernel_size: 4,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(ModelConfig { colors: 2, ..tiny() }.validate().is_err());
        assert!(ModelConfig {
            task: Task::Deblock,
            ..tiny()
        }
        .validate()
        .is_err());
        assert_eq!(ModelConfig::named("lapar-b", 3).unwrap(), ModelConfig::lapar_b(3));
        assert_eq!(ModelConfig::named("A", 4).unwrap(), ModelConfig::lapar_a(4));
        assert!(ModelConfig::named("D", 2).is_err());
        assert_eq!(Task::parse("deblock").unwrap(), Task::Deblock);
        assert!(Task::parse("inpaint").is_err());
    }

    #[test]
    fn text_form_rejects_bad_input() {
        let t = tiny().to_text();
        assert!(ModelConfig::from_text(&t.replace("blocks = 1\n", "")).is_err());
        assert!(ModelConfig::from_text(&format!("{t}depth = 3\n")).is_err());
        assert!(ModelConfig::from_text(&t.replace("scale = 2", "scale = two")).is_err());
        assert!(ModelConfig::from_text(&format!("# comment\n\n{t}")).is_ok());
    }

    proptest! {
        #[test]
        fn text_round_trip(c in 1usize..40, m in 0usize..5, l in 1usize..80, k in 0usize..4, s in 1usize..5, rgb: bool, task in 0usize..3) {
            let task = [Task::Sr, Task::Denoise, Task::Deblock][task];
            let cfg = ModelConfig { channels: c, blocks: m, basis_count: l, kernel_size: 2 * k + 1, scale: s, task: Task::Sr, colors: if rgb { 3 } else { 1 } }.for_task(task);
            prop_assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }

        #[test]
        fn direction_scale_does_not_change_output(which in 0usize..64, scale in 0.01f64..100.0) {
            let model = build_model::<f64>(&tiny(), 2).unwrap();
            let img = crate::synth::synthetic_image(3, 6, 6);
            let before = model.infer(&img).unwrap();
            let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).filter(|n| n.ends_with(".direction")).collect();
            let name = &names[which % names.len()];
            let mut scaled = model.clone();
            for v in scaled.param_mut(name).unwrap().data_mut() {
                *v *= scale;
            }
            let after = scaled.infer(&img).unwrap();
            for (a, b) in before.data().iter().zip(after.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{}: {} vs {}", name, a, b);
            }
        }
    }
}

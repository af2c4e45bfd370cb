//! TOML run configurations.
//!
//! Every section is optional; [`RunConfig::resolve`] applies defaults and
//! presets and returns both the core settings and a fully spelled-out copy
//! of the file for the run's sidecar.

use std::path::{Path, PathBuf};

use lapar_core::dictionary::{
    build_dictionary, random_dictionary, Dictionary, DictionaryConfig, DogMode, GaussianSpec,
};
use lapar_core::net::{ModelConfig, Task};
use lapar_core::synth::synthetic_set;
use lapar_core::train::{TaskSpec, TrainConfig};
use lapar_core::Image;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config types serialise to TOML")
}

/// Dictionary settings: a stored file, a seeded random dictionary, or the
/// Gaussian/DoG grid (optionally starting from a preset size).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_step_degrees: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dog_pairs: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dog_mode: Option<DogMode>,
}

impl DictionarySection {
    pub fn preset(l: usize) -> Self {
        Self {
            preset: Some(l),
            ..Default::default()
        }
    }

    pub fn random(seed: u64, l: usize, k: usize) -> Self {
        Self {
            random_seed: Some(seed),
            l: Some(l),
            k: Some(k),
            ..Default::default()
        }
    }

    /// Fills every field the chosen source uses.
    pub fn resolve(&self) -> Result<Self> {
        if self.path.is_some() {
            let grid = self.preset.is_some() || self.gammas.is_some() || self.ratios.is_some();
            if grid || self.random_seed.is_some() {
                return Err(cfg_err(
                    "dictionary: `path` cannot be combined with grid or random settings",
                ));
            }
            return Ok(Self {
                path: self.path.clone(),
                ..Default::default()
            });
        }
        if let Some(seed) = self.random_seed {
            let grid =
                self.preset.is_some() || self.gammas.is_some() || self.ratios.is_some() || self.dog_pairs.is_some();
            if grid {
                return Err(cfg_err(
                    "dictionary: `random_seed` cannot be combined with grid settings",
                ));
            }
            return Ok(Self::random(seed, self.l.unwrap_or(72), self.k.unwrap_or(5)));
        }
        let g = self.grid()?;
        Ok(Self {
            k: Some(g.k),
            l: Some(g.l),
            gammas: Some(g.gammas),
            ratios: Some(g.ratios),
            theta_step_degrees: Some(g.theta_step_degrees),
            dog_pairs: Some(g.dog_pairs),
            dog_mode: Some(g.dog_mode),
            ..Default::default()
        })
    }

    fn grid(&self) -> Result<DictionaryConfig> {
        let mut g = match self.preset {
            Some(l) => DictionaryConfig::preset(l)?,
            None => DictionaryConfig::default(),
        };
        if let Some(k) = self.k {
            g.k = k;
        }
        if let Some(l) = self.l {
            g.l = l;
        }
        if let Some(v) = &self.gammas {
            g.gammas = v.clone();
        }
        if let Some(v) = &self.ratios {
            g.ratios = v.clone();
        }
        if let Some(v) = self.theta_step_degrees {
            g.theta_step_degrees = v;
        }
        if let Some(v) = &self.dog_pairs {
            g.dog_pairs = v.clone();
        }
        if let Some(v) = self.dog_mode {
            g.dog_mode = v;
        }
        Ok(g)
    }

    pub fn build(&self) -> Result<Dictionary> {
        if let Some(path) = &self.path {
            return crate::dictfile::load(path);
        }
        if let Some(seed) = self.random_seed {
            return Ok(random_dictionary(seed, self.l.unwrap_or(72), self.k.unwrap_or(5))?);
        }
        Ok(build_dictionary(&self.grid()?)?)
    }

    /// `preset:N`, `random:SEED:L[:K]`, a `.toml` dictionary config or a
    /// stored dictionary file.
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| cfg_err(format!("bad number {s:?} in dictionary spec {spec:?}")))
        };
        match parts.as_slice() {
            ["preset", l] => Ok(Self::preset(num(l)? as usize)),
            ["random", seed, l] => Ok(Self::random(num(seed)?, num(l)? as usize, 5)),
            ["random", seed, l, k] => Ok(Self::random(num(seed)?, num(l)? as usize, num(k)? as usize)),
            _ if spec.ends_with(".toml") => read_toml(Path::new(spec)),
            _ => Ok(Self {
                path: Some(spec.into()),
                ..Default::default()
            }),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `A`, `B` or `C`; explicit fields override the preset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub colors: Option<usize>,
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let scale = self.scale.unwrap_or(2);
        let mut cfg = ModelConfig::named(self.preset.as_deref().unwrap_or("C"), scale)?;
        let task = self.task.unwrap_or(Task::Sr);
        if task != Task::Sr && self.scale.is_none() {
            cfg.scale = 1;
        }
        cfg.task = task;
        cfg.channels = self.channels.unwrap_or(cfg.channels);
        cfg.blocks = self.blocks.unwrap_or(cfg.blocks);
        cfg.basis_count = self.basis_count.unwrap_or(cfg.basis_count);
        cfg.kernel_size = self.kernel_size.unwrap_or(cfg.kernel_size);
        cfg.colors = self.colors.unwrap_or(cfg.colors);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self {
            preset: None,
            channels: Some(cfg.channels),
            blocks: Some(cfg.blocks),
            basis_count: Some(cfg.basis_count),
            kernel_size: Some(cfg.kernel_size),
            scale: Some(cfg.scale),
            task: Some(cfg.task),
            colors: Some(cfg.colors),
        }
    }
}

/// Degradation settings; noise levels are in 8-bit gray levels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// Isotropic blur width before decimation; 0 disables the blur.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blur_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality_range: Option<[u32; 2]>,
}

impl TaskSection {
    pub fn resolve(&self, model: &ModelConfig) -> Result<TaskSpec> {
        let spec = match (model.task, TaskSpec::default_for(model.task, model.scale)) {
            (Task::Sr, TaskSpec::Sr { scale, blur }) => TaskSpec::Sr {
                scale,
                blur: match self.blur_sigma {
                    None => blur,
                    Some(0.0) => None,
                    Some(s) if s > 0.0 => Some(GaussianSpec::isotropic(s)),
                    Some(s) => return Err(cfg_err(format!("blur_sigma must be >= 0, got {s}"))),
                },
            },
            (Task::Denoise, TaskSpec::Denoise { sigma_range }) => TaskSpec::Denoise {
                sigma_range: self
                    .sigma_range
                    .map_or(sigma_range, |[lo, hi]| (lo / 255.0, hi / 255.0)),
            },
            (Task::Deblock, TaskSpec::Deblock { quality_range }) => TaskSpec::Deblock {
                quality_range: self.quality_range.map_or(quality_range, |[lo, hi]| (lo, hi)),
            },
            _ => unreachable!("default_for matches the task"),
        };
        Ok(spec)
    }

    pub fn from_spec(spec: &TaskSpec) -> Self {
        match spec {
            TaskSpec::Sr { blur, .. } => Self {
                blur_sigma: Some(blur.map_or(0.0, |g| g.gamma)),
                ..Default::default()
            },
            TaskSpec::Denoise { sigma_range: (lo, hi) } => Self {
                sigma_range: Some([lo * 255.0, hi * 255.0]),
                ..Default::default()
            },
            TaskSpec::Deblock {
                quality_range: (lo, hi),
            } => Self {
                quality_range: Some([*lo, *hi]),
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub total_iters: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub patch: usize,
    pub seed: u64,
    pub eps_charbonnier: f64,
    pub augment: bool,
    pub val_every: usize,
    /// Checkpoint cadence in iterations; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub precision: Precision,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 8,
            total_iters: 2000,
            lr_init: 4e-4,
            lr_final: 1e-7,
            patch: 64,
            seed: 0,
            eps_charbonnier: 1e-3,
            augment: true,
            val_every: 200,
            checkpoint_every: 500,
            precision: Precision::F32,
        }
    }
}

/// `synthetic:SEED:COUNT:SIZE` or a directory of images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ImageSet {
    Synthetic { seed: u64, count: usize, size: usize },
    Dir(PathBuf),
}

impl ImageSet {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synthetic:") {
            let v: Vec<u64> = rest
                .split(':')
                .map(|p| {
                    p.parse()
                        .map_err(|_| cfg_err(format!("bad synthetic set {s:?} (synthetic:SEED:COUNT:SIZE)")))
                })
                .collect::<Result<_>>()?;
            return match v.as_slice() {
                [seed, count, size] if *count > 0 && *size > 0 => Ok(Self::Synthetic {
                    seed: *seed,
                    count: *count as usize,
                    size: *size as usize,
                }),
                _ => Err(cfg_err(format!("bad synthetic set {s:?} (synthetic:SEED:COUNT:SIZE)"))),
            };
        }
        Ok(Self::Dir(s.into()))
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Synthetic { seed, count, size } => format!("synthetic:{seed}:{count}:{size}"),
            Self::Dir(p) => p.display().to_string(),
        }
    }

    /// Images with their names, sorted by file name for directories.
    pub fn load(&self) -> Result<Vec<(String, Image)>> {
        match self {
            Self::Synthetic { seed, count, size } => Ok(synthetic_set(*seed, *count, *size, *size)
                .into_iter()
                .enumerate()
                .map(|(i, img)| (format!("synthetic_{:03}", seed + i as u64), img))
                .collect()),
            Self::Dir(dir) => {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(io_err(dir))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        let ext = p
                            .extension()
                            .and_then(|e| e.to_str())
                            .unwrap_or("")
                            .to_ascii_lowercase();
                        matches!(ext.as_str(), "png" | "jpg" | "jpeg" | "pgm" | "ppm")
                    })
                    .collect();
                paths.sort();
                if paths.is_empty() {
                    return Err(cfg_err(format!("{}: no images found", dir.display())));
                }
                paths
                    .into_iter()
                    .map(|p| {
                        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
                        Ok((name, crate::imageio::read_image(&p)?))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: String,
    /// Empty disables validation.
    pub validation: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: "synthetic:1:16:96".into(),
            validation: "synthetic:17:4:96".into(),
        }
    }
}

/// A training run as written in a config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub dictionary: DictionarySection,
    pub task: TaskSection,
    pub train: TrainSection,
    pub data: DataSection,
}

/// A run with defaults applied.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub train: TrainConfig,
    pub dictionary: DictionarySection,
    pub data: ImageSet,
    pub validation: Option<ImageSet>,
    pub precision: Precision,
    pub checkpoint_every: usize,
    /// Fully spelled-out config, the content of the run's sidecar.
    pub echo: RunConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_toml(path)
    }

    pub fn resolve(&self) -> Result<ResolvedRun> {
        let model = self.model.resolve()?;
        let dictionary = self.dictionary.resolve()?;
        let dictionary = match (&dictionary.path, dictionary.l) {
            (None, None) => DictionarySection {
                l: Some(model.basis_count),
                ..dictionary
            },
            _ => dictionary,
        };
        let task = self.task.resolve(&model)?;
        let t = &self.train;
        let train = TrainConfig {
            model: model.clone(),
            task: task.clone(),
            batch_size: t.batch_size,
            total_iters: t.total_iters,
            lr_init: t.lr_init,
            lr_final: t.lr_final,
            patch: t.patch,
            seed: t.seed,
            eps_charbonnier: t.eps_charbonnier,
            augment: t.augment,
            val_every: t.val_every,
        };
        train.validate()?;
        let data = ImageSet::parse(&self.data.train)?;
        let validation = match self.data.validation.trim() {
            "" => None,
            v => Some(ImageSet::parse(v)?),
        };
        let echo = RunConfig {
            model: ModelSection::from_config(&model),
            dictionary: dictionary.clone(),
            task: TaskSection::from_spec(&task),
            train: self.train.clone(),
            data: self.data.clone(),
        };
        Ok(ResolvedRun {
            train,
            dictionary,
            data,
            validation,
            precision: t.precision,
            checkpoint_every: t.checkpoint_every,
            echo,
        })
    }
}

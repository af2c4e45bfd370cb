//! Subcommands of the `lapar` binary.
//!
//! Every command that writes files also writes `<output>.run.toml` (for
//! `train`: `run.toml` and `resolved.toml` in the output directory) holding
//! the parsed arguments with defaults filled in. If a command fails, files it
//! created are removed again.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lapar_core::assembly::ExecutionPath;
use lapar_core::dictionary::Dictionary;
use lapar_core::metrics::{compare, luma, MetricReport};
use lapar_core::net::{build_model, count_multiadds, count_params, ModelConfig, ModelState, Task};
use lapar_core::oracle::{ablation_report, AblationSpec, RidgeProblem};
use lapar_core::resample::{degrade, Degradation};
use lapar_core::train::{
    baseline_psnr, eval_border, evaluate, prepare_task_data, train, validation_psnr, Dataset, SamplePair, TaskSpec,
    TrainState,
};
use lapar_core::{Image, Real};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{read_toml, to_toml, DictionarySection, ImageSet, Precision, RunConfig};
use crate::dictfile;
use crate::error::{io_err, Error, Result};
use crate::imageio::{read_image, write_atomic, write_image};
use crate::pipeline::{self, Timings};
use crate::tables::{ablation_table, append_log, Table};

// stdout writes ignore errors so that piping into `head` does not panic
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! out_raw {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "lapar",
    version,
    about = "Pixel-adaptive restoration with a fixed Gaussian/DoG filter dictionary"
)]
pub struct Cli {
    /// Overrides the seed of the run (training seed, random dictionaries,
    /// evaluation noise).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Arithmetic precision for training and inference.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build a filter dictionary file.
    BuildDict(BuildDictArgs),
    /// Train a coefficient network.
    Train(TrainArgs),
    /// Super-resolve an image.
    Sr(SrArgs),
    /// Remove noise from an image.
    Denoise(RestoreArgs),
    /// Remove block-compression artefacts from an image.
    Deblock(RestoreArgs),
    /// PSNR/SSIM table of a model (or of stored predictions) on an image set.
    Eval(EvalArgs),
    /// Closed-form oracle PSNR of several dictionaries.
    Ablate(AblateArgs),
    /// Parameter and multiply-add counts.
    Report(ReportArgs),
    /// Describe a checkpoint, dictionary or image file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct BuildDictArgs {
    /// Dictionary config (TOML).
    #[arg(long, conflicts_with_all = ["preset", "random"])]
    pub config: Option<PathBuf>,
    /// Built-in grid size: 72, 24 or 14.
    #[arg(long)]
    pub preset: Option<usize>,
    /// Random filters seeded by --seed instead of the Gaussian/DoG grid.
    #[arg(long)]
    pub random: bool,
    /// Filter count for --random.
    #[arg(long, default_value_t = 72)]
    pub size: usize,
    /// Kernel size for --random.
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write one PNG per filter and a montage into this directory.
    #[arg(long)]
    pub export_png: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Run config (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoint, dictionary, log and sidecars.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run of this config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides the configured iteration count.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Stop after this iteration (the schedule still spans the full count)
    /// and leave a checkpoint to resume from.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PathArg {
    Pixelwise,
    Basisconv,
}

impl From<PathArg> for ExecutionPath {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Pixelwise => ExecutionPath::Pixelwise,
            PathArg::Basisconv => ExecutionPath::BasisConv,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SrArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    /// Must match the checkpoint when given.
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PathArg::Basisconv)]
    pub path: PathArg,
}

#[derive(Args, Debug, Serialize)]
pub struct RestoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PathArg::Basisconv)]
    pub path: PathArg,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; omit together with --dict when using --pred.
    #[arg(long, requires = "dict")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Clean images: a directory or `synthetic:SEED:COUNT:SIZE`.
    #[arg(long)]
    pub set: String,
    /// Expected task of the checkpoint.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Noise level in gray levels for denoise evaluation.
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f64,
    /// Block quantisation quality for deblock evaluation.
    #[arg(long, default_value_t = 30)]
    pub quality: u32,
    /// Degraded inputs produced elsewhere (e.g. real JPEG files), matched to
    /// the clean set by file stem.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// Score stored predictions (matched by file stem) instead of a model.
    #[arg(long, conflicts_with = "model")]
    pub pred: Option<PathBuf>,
    /// Border crop for --pred.
    #[arg(long, default_value_t = 0)]
    pub border: usize,
    /// Table output; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AblateArgs {
    /// Dictionaries: `preset:N`, `random:SEED:L[:K]`, a .toml config or a
    /// dictionary file.
    #[arg(long = "dict", num_args = 1.., default_values_t = ["preset:72".to_string(), "random:0:72".to_string(), "random:0:14".to_string()])]
    pub dicts: Vec<String>,
    #[arg(long, default_value = "synthetic:100:10:64")]
    pub set: String,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Presets to report (A, B, C).
    #[arg(long = "model", num_args = 1.., default_values_t = ["A".to_string(), "B".to_string(), "C".to_string()])]
    pub models: Vec<String>,
    /// Also report the model of this run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, num_args = 1.., default_values_t = [2usize])]
    pub scale: Vec<usize>,
    /// Output size the multiply-adds refer to.
    #[arg(long, default_value_t = 1280)]
    pub width: usize,
    #[arg(long, default_value_t = 720)]
    pub height: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct InspectArgs {
    pub file: PathBuf,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    Task::parse(s).map_err(|e| e.to_string())
}

/// Files and directories created by the current command; removed on drop
/// unless [`Outputs::commit`] was called.
#[derive(Debug, Default)]
struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn file(&mut self, path: &Path) -> PathBuf {
        if !path.exists() {
            self.files.push(path.to_path_buf());
        }
        path.to_path_buf()
    }

    fn dir(&mut self, path: &Path) -> Result<PathBuf> {
        if !path.exists() {
            std::fs::create_dir_all(path).map_err(io_err(path))?;
            self.dirs.push(path.to_path_buf());
        }
        Ok(path.to_path_buf())
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.toml");
    out.with_file_name(name)
}

fn write_sidecar(outputs: &mut Outputs, path: &Path, cli: &Cli, extra: &str) -> Result<()> {
    let path = outputs.file(path);
    let mut text = to_toml(cli);
    if !extra.is_empty() {
        text.push('\n');
        text.push_str(extra);
    }
    write_atomic(&path, text.as_bytes())
}

fn timing_line(name: &str, start: Instant) {
    eprintln!("timing\t{name}\t{:.3} ms", start.elapsed().as_secs_f64() * 1e3);
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let precision = cli.precision.unwrap_or_default();
    match &cli.command {
        Command::BuildDict(a) => build_dict(cli, a),
        Command::Train(a) => {
            let mut run = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = cli.seed {
                run.train.seed = seed;
            }
            if let Some(p) = cli.precision {
                run.train.precision = p;
            }
            if let Some(n) = a.iters {
                run.train.total_iters = n;
            }
            match run.train.precision {
                Precision::F32 => train_cmd::<f32>(cli, a, &run),
                Precision::F64 => train_cmd::<f64>(cli, a, &run),
            }
        }
        Command::Sr(a) => {
            let r = RestoreArgs {
                model: a.model.clone(),
                dict: a.dict.clone(),
                input: a.input.clone(),
                out: a.out.clone(),
                path: a.path,
            };
            dispatch_restore(cli, &r, Task::Sr, a.scale, precision)
        }
        Command::Denoise(a) => dispatch_restore(cli, a, Task::Denoise, None, precision),
        Command::Deblock(a) => dispatch_restore(cli, a, Task::Deblock, None, precision),
        Command::Eval(a) => match precision {
            Precision::F32 => eval_cmd::<f32>(cli, a),
            Precision::F64 => eval_cmd::<f64>(cli, a),
        },
        Command::Ablate(a) => ablate_cmd(cli, a),
        Command::Report(a) => report_cmd(cli, a),
        Command::Inspect(a) => inspect_cmd(a),
    }
}

fn build_dict(cli: &Cli, a: &BuildDictArgs) -> Result<()> {
    let start = Instant::now();
    let section = if let Some(p) = &a.config {
        read_toml::<DictionarySection>(p)?
    } else if a.random {
        DictionarySection::random(cli.seed.unwrap_or(0), a.size, a.kernel)
    } else {
        DictionarySection::preset(a.preset.unwrap_or(72))
    };
    let resolved = section.resolve()?;
    let dict = resolved.build()?;
    timing_line("build", start);
    let mut outputs = Outputs::default();
    let start = Instant::now();
    dictfile::save(&outputs.file(&a.out), &dict)?;
    if let Some(dir) = &a.export_png {
        let dir = outputs.dir(dir)?;
        for p in dictfile::export_filters(&dict, &dir)? {
            outputs.file(&p);
        }
    }
    timing_line("write", start);
    write_sidecar(
        &mut outputs,
        &sidecar_path(&a.out),
        cli,
        &format!("[resolved.dictionary]\n{}", to_toml(&resolved)),
    )?;
    out!(
        "{}: {} ({} filters of {}x{})",
        a.out.display(),
        dict.name(),
        dict.len(),
        dict.kernel_size(),
        dict.kernel_size()
    );
    outputs.commit();
    Ok(())
}

fn images_for(colors: usize, images: Vec<(String, Image)>) -> Result<Vec<(String, Image)>> {
    images
        .into_iter()
        .map(|(n, img)| match (colors, img.channels()) {
            (1, 3) => Ok((n, luma(&img)?)),
            (c, ic) if c == ic => Ok((n, img)),
            (c, ic) => Err(Error::Config(format!("{n}: model takes {c} plane(s), image has {ic}"))),
        })
        .collect()
}

fn cast_pairs<T: Real>(pairs: Vec<SamplePair>) -> Result<Vec<SamplePair<T>>> {
    pairs
        .into_iter()
        .map(|p| {
            let mut q = SamplePair::from_parts(p.input.cast::<T>(), p.target.cast::<T>(), p.degradation)?;
            q.source = p.source.cast::<T>();
            Ok(q)
        })
        .collect()
}

fn train_cmd<T: Real>(cli: &Cli, a: &TrainArgs, run: &RunConfig) -> Result<()> {
    let resolved = run.resolve()?;
    let cfg = &resolved.train;
    let mut outputs = Outputs::default();
    let dir = outputs.dir(&a.out)?;
    write_sidecar(&mut outputs, &dir.join("run.toml"), cli, "")?;
    write_atomic(
        &outputs.file(&dir.join("resolved.toml")),
        to_toml(&resolved.echo).as_bytes(),
    )?;

    let start = Instant::now();
    let dict = resolved.dictionary.build()?;
    dictfile::save(&outputs.file(&dir.join("dictionary.ldic")), &dict)?;
    let train_images = images_for(cfg.model.colors, resolved.data.load()?)?;
    let small = train_images
        .iter()
        .filter(|(_, i)| i.height() < cfg.patch || i.width() < cfg.patch)
        .count();
    if small > 0 {
        eprintln!(
            "warning: {small} of {} training images are smaller than the {}x{} patch and are skipped",
            train_images.len(),
            cfg.patch,
            cfg.patch
        );
    }
    let dataset = Dataset::new(train_images.into_iter().map(|(_, i)| i).collect(), cfg.model.colors)?;
    let validation: Vec<SamplePair<T>> = match &resolved.validation {
        Some(set) => {
            let imgs: Vec<Image> = images_for(cfg.model.colors, set.load()?)?
                .into_iter()
                .map(|(_, i)| i)
                .collect();
            cast_pairs(prepare_task_data(&imgs, &cfg.task, cfg.seed ^ 0x7a11)?)?
        }
        None => Vec::new(),
    };
    timing_line("prepare", start);

    let mut state = match &a.resume {
        Some(p) => {
            let ck = checkpoint::load::<T>(p)?;
            if ck.model.config() != &cfg.model {
                return Err(Error::Config(format!(
                    "{} was trained with a different model config",
                    p.display()
                )));
            }
            ck.into_state()
        }
        None => TrainState::new(build_model::<T>(&cfg.model, cfg.seed)?),
    };
    let border = eval_border(cfg.model.task, cfg.model.scale);
    if !validation.is_empty() {
        eprintln!(
            "validation baseline {:.4} dB, initial model {:.4} dB",
            baseline_psnr(&validation, border)?,
            validation_psnr(&state.model, &dict, &validation)?
        );
    }
    let ckpt_path = outputs.file(&dir.join("checkpoint.lpar"));
    let log_path = outputs.file(&dir.join("metrics.tsv"));
    let every = resolved.checkpoint_every;
    let start = Instant::now();
    let first = state.iter;
    let mut stopped = false;
    let result = train(cfg, &dataset, &dict, &validation, &mut state, |s, row| {
        let io = |e: Error| lapar_core::Error::InvalidArgument(e.to_string());
        append_log(&log_path, std::slice::from_ref(row)).map_err(io)?;
        if let Some(v) = row.val_psnr {
            eprintln!(
                "iter {:>6}  lr {:.3e}  loss {:.6}  val {:.4} dB",
                row.iter, row.lr, row.loss, v
            );
        }
        if every > 0 && s.iter % every == 0 && s.iter < cfg.total_iters {
            checkpoint::save(&ckpt_path, &Checkpoint::from_state(s)).map_err(io)?;
        }
        if a.stop_after == Some(s.iter) && s.iter < cfg.total_iters {
            stopped = true;
            return Err(lapar_core::Error::InvalidArgument("stopped".into()));
        }
        Ok(())
    });
    if let Err(e) = result {
        if !stopped {
            return Err(e.into());
        }
    }
    let elapsed = start.elapsed();
    checkpoint::save(&ckpt_path, &Checkpoint::from_state(&state))?;
    if state.iter == first {
        append_log(&log_path, &[])?;
    }
    eprintln!(
        "timing\ttrain\t{:.3} s ({} iterations, {:.2} ms each)",
        elapsed.as_secs_f64(),
        state.iter - first,
        elapsed.as_secs_f64() * 1e3 / (state.iter - first).max(1) as f64
    );
    if !validation.is_empty() {
        out!(
            "final validation PSNR {:.4} dB (baseline {:.4} dB)",
            validation_psnr(&state.model, &dict, &validation)?,
            baseline_psnr(&validation, border)?
        );
    }
    out!("wrote {}", ckpt_path.display());
    outputs.commit();
    Ok(())
}

fn dispatch_restore(cli: &Cli, a: &RestoreArgs, task: Task, scale: Option<usize>, precision: Precision) -> Result<()> {
    match precision {
        Precision::F32 => restore_cmd::<f32>(cli, a, task, scale),
        Precision::F64 => restore_cmd::<f64>(cli, a, task, scale),
    }
}

fn load_model<T: Real>(path: &Path, dict_path: &Path) -> Result<(ModelState<T>, Dictionary)> {
    let model = checkpoint::load::<T>(path)?.model;
    let dict = dictfile::load(dict_path)?;
    pipeline::check_dictionary(&model, &dict)?;
    Ok((model, dict))
}

fn restore_cmd<T: Real>(cli: &Cli, a: &RestoreArgs, task: Task, scale: Option<usize>) -> Result<()> {
    let mut timings = Timings::default();
    let (model, dict, input) = timings.time("load", || -> Result<_> {
        let (m, d) = load_model::<T>(&a.model, &a.dict)?;
        Ok((m, d, read_image(&a.input)?))
    })?;
    if let Some(s) = scale {
        if s != model.config().scale {
            return Err(Error::Config(format!(
                "--scale {s} but the checkpoint is a x{} model",
                model.config().scale
            )));
        }
    }
    let out = pipeline::run(&model, &dict, &input, task, a.path.into(), &mut timings)?;
    let mut outputs = Outputs::default();
    timings.time("save", || write_image(&outputs.file(&a.out), &out))?;
    let extra = format!("[resolved.model]\n{}", model.config().to_text());
    write_sidecar(&mut outputs, &sidecar_path(&a.out), cli, &extra)?;
    eprint!("{}", timings.report());
    out!(
        "{}: {}x{} -> {}x{}",
        a.out.display(),
        input.width(),
        input.height(),
        out.width(),
        out.height()
    );
    outputs.commit();
    Ok(())
}

fn find_by_stem(dir: &Path, stem: &str) -> Result<PathBuf> {
    for ext in ["png", "jpg", "jpeg", "pgm", "ppm"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::Config(format!("{}: no image named {stem}", dir.display())))
}

fn report_row(t: &mut Table, image: &str, method: &str, params: usize, multiadds: u64, r: &MetricReport) {
    t.push(vec![
        image.into(),
        method.into(),
        params.to_string(),
        multiadds.to_string(),
        format!("{:.4}", r.psnr_db),
        format!("{:.6}", r.ssim),
        r.border_crop.to_string(),
    ]);
}

const EVAL_HEADER: [&str; 7] = ["image", "method", "params", "multiadds", "psnr_db", "ssim", "border"];

fn eval_cmd<T: Real>(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let start = Instant::now();
    let set = ImageSet::parse(&a.set)?;
    let clean = set.load()?;
    let mut table = Table::new(&EVAL_HEADER);
    if let Some(pred_dir) = &a.pred {
        let mut sum = (0.0, 0.0);
        let mut last = None;
        for (name, gt) in &clean {
            let pred = read_image(&find_by_stem(pred_dir, name)?)?;
            let r = compare(&pred, gt, a.border)?;
            sum.0 += r.psnr_db;
            sum.1 += r.ssim;
            report_row(&mut table, name, "external", 0, 0, &r);
            last = Some(r);
        }
        let n = clean.len() as f64;
        let mean = MetricReport {
            psnr_db: sum.0 / n,
            ssim: sum.1 / n,
            ..last.expect("set is non-empty")
        };
        report_row(&mut table, "mean", "external", 0, 0, &mean);
    } else {
        let (model_path, dict_path) = match (&a.model, &a.dict) {
            (Some(m), Some(d)) => (m, d),
            _ => return Err(Error::Config("eval needs --model and --dict, or --pred".into())),
        };
        let (model, dict) = load_model::<T>(model_path, dict_path)?;
        let cfg = model.config().clone();
        if let Some(t) = a.task {
            if t != cfg.task {
                return Err(Error::Config(format!(
                    "checkpoint is a {} model, not {}",
                    cfg.task.as_str(),
                    t.as_str()
                )));
            }
        }
        let clean = images_for(cfg.colors, clean)?;
        let names: Vec<String> = clean.iter().map(|(n, _)| n.clone()).collect();
        let images: Vec<Image> = clean.iter().map(|(_, i)| i.clone()).collect();
        let seed = cli.seed.unwrap_or(0);
        let pairs = match &a.inputs {
            Some(dir) => {
                let mut pairs = Vec::new();
                for (name, img) in &clean {
                    let target = img.crop_to_multiple(cfg.scale)?;
                    let input = images_for(cfg.colors, vec![(name.clone(), read_image(&find_by_stem(dir, name)?)?)])?;
                    let degradation = match cfg.task {
                        Task::Sr => Degradation::Sr {
                            scale: cfg.scale,
                            blur: None,
                        },
                        Task::Denoise => Degradation::Denoise { sigma: a.sigma / 255.0 },
                        Task::Deblock => Degradation::Deblock { quality: a.quality },
                    };
                    pairs.push(SamplePair::from_parts(input[0].1.clone(), target, degradation)?);
                }
                pairs
            }
            None => {
                let spec = match cfg.task {
                    Task::Sr => TaskSpec::default_for(Task::Sr, cfg.scale),
                    Task::Denoise => TaskSpec::Denoise {
                        sigma_range: (a.sigma / 255.0, a.sigma / 255.0),
                    },
                    Task::Deblock => TaskSpec::Deblock {
                        quality_range: (a.quality, a.quality),
                    },
                };
                prepare_task_data(&images, &spec, seed)?
            }
        };
        let pairs = cast_pairs::<T>(pairs)?;
        let rows = evaluate(&model, &dict, &pairs, &names)?;
        let params = count_params(&cfg);
        let adds: Vec<u64> = pairs
            .iter()
            .map(|p| count_multiadds(&cfg, p.target.height(), p.target.width()))
            .collect();
        let mean_adds = adds.iter().sum::<u64>() / adds.len().max(1) as u64;
        for r in &rows {
            let lapar = r.method == "lapar";
            let idx = names.iter().position(|n| *n == r.image);
            let madds = if !lapar { 0 } else { idx.map_or(mean_adds, |i| adds[i]) };
            report_row(
                &mut table,
                &r.image,
                &r.method,
                if lapar { params } else { 0 },
                madds,
                &r.report,
            );
        }
    }
    timing_line("eval", start);
    emit_table(cli, &table, a.out.as_deref())
}

fn emit_table(cli: &Cli, table: &Table, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let mut outputs = Outputs::default();
            table.write(&outputs.file(path))?;
            write_sidecar(&mut outputs, &sidecar_path(path), cli, "")?;
            outputs.commit();
            out!("wrote {}", path.display());
        }
        None => out_raw!("{}", table.to_tsv()),
    }
    Ok(())
}

fn ablate_cmd(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let start = Instant::now();
    let dicts = a
        .dicts
        .iter()
        .map(|s| {
            let mut section = DictionarySection::parse_spec(s)?;
            if let (Some(seed), Some(_)) = (cli.seed, section.random_seed) {
                section.random_seed = Some(seed);
            }
            let dict = section.build()?;
            // distinguish random dictionaries of equal size by their seed
            Ok(match section.random_seed {
                Some(seed) => Dictionary::from_parts(
                    format!("{}-seed{seed}", dict.name()),
                    dict.bases().to_vec(),
                    dict.specs().to_vec(),
                )?,
                None => dict,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let images = ImageSet::parse(&a.set)?.load()?;
    let pairs = images
        .iter()
        .enumerate()
        .map(|(i, (_, hr))| {
            let hr = hr.crop_to_multiple(a.scale)?;
            Ok((degrade(&hr, &Degradation::sr(a.scale), i as u64)?, hr))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = AblationSpec {
        scale: a.scale,
        problem: RidgeProblem {
            window: a.window,
            ridge_lambda: a.lambda,
        },
    };
    let rows = ablation_report(&dicts, &pairs, &spec)?;
    timing_line("ablate", start);
    emit_table(cli, &ablation_table(&rows), a.out.as_deref())
}

fn report_cmd(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let mut rows: Vec<(String, ModelConfig)> = Vec::new();
    for &s in &a.scale {
        for name in &a.models {
            let cfg = ModelConfig::named(name, s)?;
            rows.push((
                format!("LAPAR-{}", name.to_ascii_uppercase().trim_start_matches("LAPAR-")),
                cfg,
            ));
        }
    }
    if let Some(p) = &a.config {
        let run = RunConfig::load(p)?;
        rows.push(("config".into(), run.resolve()?.train.model));
    }
    rows.sort_by(|x, y| {
        x.1.scale
            .cmp(&y.1.scale)
            .then(count_params(&y.1).cmp(&count_params(&x.1)))
    });
    let mut t = Table::new(&["method", "scale", "params", "multiadds", "output"]);
    for (name, cfg) in &rows {
        t.push(vec![
            name.clone(),
            cfg.scale.to_string(),
            count_params(cfg).to_string(),
            count_multiadds(cfg, a.height, a.width).to_string(),
            format!("{}x{}", a.width, a.height),
        ]);
    }
    emit_table(cli, &t, a.out.as_deref())
}

fn inspect_cmd(a: &InspectArgs) -> Result<()> {
    let bytes = std::fs::read(&a.file).map_err(io_err(&a.file))?;
    match bytes.get(..4) {
        Some(m) if m == checkpoint::MAGIC => {
            let ck = checkpoint::decode::<f32>(&bytes)?;
            let cfg = ck.model.config();
            out!("checkpoint (format {})", checkpoint::VERSION);
            out_raw!("{}", cfg.to_text());
            out!("iterations = {}", ck.iter);
            out!(
                "optimiser = {}",
                ck.adam
                    .as_ref()
                    .map_or("none".to_string(), |o| format!("adam, {} steps", o.steps()))
            );
            out!("parameters = {}", ck.model.num_params());
            for (name, t) in ck.model.params() {
                out!("  {name}\t{:?}", t.shape());
            }
        }
        Some(m) if m == dictfile::MAGIC => {
            let d = dictfile::decode(&bytes)?;
            out!(
                "dictionary {} (format {}), L = {}, k = {}",
                d.name(),
                dictfile::VERSION,
                d.len(),
                d.kernel_size()
            );
            for (i, (b, s)) in d.bases().iter().zip(d.specs()).enumerate() {
                out!("  {i:>3}\tsum {:+.6}\t{}", b.sum(), s.describe());
            }
        }
        _ => {
            let img = read_image(&a.file)?;
            let lo = img.pixels().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = img.pixels().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out!(
                "image {}x{}, {} channel(s), min {:.4}, max {:.4}, mean {:.4}",
                img.width(),
                img.height(),
                img.channels(),
                lo,
                hi,
                img.mean()
            );
        }
    }
    Ok(())
}

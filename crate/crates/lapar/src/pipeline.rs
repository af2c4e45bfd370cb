//! Inference on whole images with per-stage wall-clock timing.

use std::time::{Duration, Instant};

use lapar_core::assembly::{enhance, ChannelMode, ExecutionPath};
use lapar_core::dictionary::Dictionary;
use lapar_core::metrics::luma;
use lapar_core::net::{ModelState, Task};
use lapar_core::resample::bicubic_resize_to;
use lapar_core::{Image, Real};

use crate::error::{Error, Result};

/// Named stage durations in execution order.
#[derive(Clone, Debug, Default)]
pub struct Timings {
    pub stages: Vec<(String, Duration)>,
}

impl Timings {
    pub fn time<R>(&mut self, name: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        self.stages.push((name.to_string(), start.elapsed()));
        out
    }

    pub fn total(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }

    /// `timing <stage> <ms>` lines.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (name, d) in &self.stages {
            out.push_str(&format!("timing\t{name}\t{:.3} ms\n", d.as_secs_f64() * 1e3));
        }
        out.push_str(&format!("timing\ttotal\t{:.3} ms\n", self.total().as_secs_f64() * 1e3));
        out
    }
}

pub fn check_dictionary<T: Real>(model: &ModelState<T>, dict: &Dictionary) -> Result<()> {
    let cfg = model.config();
    if dict.len() != cfg.basis_count || dict.kernel_size() != cfg.kernel_size {
        return Err(Error::Config(format!(
            "dictionary {} has L = {}, k = {}; the model expects L = {}, k = {}",
            dict.name(),
            dict.len(),
            dict.kernel_size(),
            cfg.basis_count,
            cfg.kernel_size
        )));
    }
    Ok(())
}

/// Restores `input` with `model`.
///
/// SR models filter the bicubic upsampling, restoration models the input
/// itself. A one-plane model on a colour image predicts coefficients from
/// luma and filters luma only; chroma comes from the (upsampled) source.
pub fn run<T: Real>(
    model: &ModelState<T>,
    dict: &Dictionary,
    input: &Image,
    task: Task,
    path: ExecutionPath,
    timings: &mut Timings,
) -> Result<Image> {
    let cfg = model.config();
    if cfg.task != task {
        return Err(Error::Config(format!(
            "checkpoint was trained for {}, not {}",
            cfg.task.as_str(),
            task.as_str()
        )));
    }
    check_dictionary(model, dict)?;
    let (net_input, mode) = match (cfg.colors, input.channels()) {
        (1, 1) | (3, 3) => (input.clone(), ChannelMode::All),
        (1, 3) => (luma(input)?, ChannelMode::Luma),
        (m, c) => return Err(Error::Config(format!("model takes {m} plane(s), image has {c}"))),
    };
    let s = cfg.scale;
    let source = timings.time("upsample", || {
        if s == 1 {
            Ok(input.clone())
        } else {
            bicubic_resize_to(input, input.height() * s, input.width() * s)
        }
    })?;
    let phi = timings.time("forward", || model.infer(&net_input.cast::<T>()))?;
    let out = timings.time("filter", || enhance(&source.cast::<T>(), &phi, dict, path, mode))?;
    Ok(out.cast::<f64>().clamped())
}

//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LPAR"  u16 version
//! u32 len, config text   (model keys, then `iter` and `adam_step`)
//! u32 tensor count
//! per tensor: u32 len, name, u32 rank, rank x u32 dims, f32 payload
//! u32 CRC32 of everything above
//! ```
//!
//! Model parameters come first in layer order, followed by the Adam moments
//! as `adam.m.<name>` and `adam.v.<name>` when the optimiser state is
//! stored. Payloads are f32, so an f64 model is rounded on save.

use std::path::Path;

use lapar_core::net::{ModelConfig, ModelState};
use lapar_core::tensor::Tensor;
use lapar_core::train::{Adam, TrainState};
use lapar_core::Real;

use crate::binfmt::{Reader, Writer};
use crate::error::{format_err, io_err, Result};
use crate::imageio::write_atomic;

pub const MAGIC: &[u8; 4] = b"LPAR";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelState<T>,
    pub adam: Option<Adam<T>>,
    /// Training iterations completed.
    pub iter: usize,
}

impl<T: Real> Checkpoint<T> {
    pub fn model_only(model: ModelState<T>) -> Self {
        Self {
            model,
            adam: None,
            iter: 0,
        }
    }

    pub fn from_state(state: &TrainState<T>) -> Self {
        Self {
            model: state.model.clone(),
            adam: Some(state.adam.clone()),
            iter: state.iter,
        }
    }

    /// Training state to resume from; a fresh optimiser if none was stored.
    pub fn into_state(self) -> TrainState<T> {
        let adam = self.adam.unwrap_or_else(|| Adam::for_model(&self.model));
        TrainState {
            model: self.model,
            adam,
            iter: self.iter,
        }
    }

    pub fn cast<U: Real>(&self) -> Checkpoint<U> {
        let adam = self.adam.as_ref().map(|a| {
            let (m, v) = a.moments();
            let conv = |b: &[Vec<T>]| b.iter().map(|x| x.iter().map(|v| U::of(v.f64())).collect()).collect();
            Adam::from_state(a.steps(), conv(m), conv(v)).expect("moment shapes are consistent")
        });
        Checkpoint {
            model: self.model.cast(),
            adam,
            iter: self.iter,
        }
    }
}

pub fn encode<T: Real>(ck: &Checkpoint<T>) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    let steps = ck.adam.as_ref().map_or(0, |a| a.steps());
    let text = format!(
        "{}iter = {}\nadam_step = {}\n",
        ck.model.config().to_text(),
        ck.iter,
        steps
    );
    w.bytes(text.as_bytes());
    let params = ck.model.params();
    let mut tensors: Vec<(String, &[usize], &[T])> =
        params.iter().map(|(n, t)| (n.clone(), t.shape(), t.data())).collect();
    if let Some(adam) = &ck.adam {
        let (m, v) = adam.moments();
        for (prefix, buf) in [("adam.m.", m), ("adam.v.", v)] {
            for ((name, t), b) in params.iter().zip(buf) {
                tensors.push((format!("{prefix}{name}"), t.shape(), b));
            }
        }
    }
    w.u32(tensors.len());
    for (name, shape, data) in tensors {
        w.bytes(name.as_bytes());
        w.u32(shape.len());
        for &d in shape {
            w.u32(d);
        }
        for &v in data {
            w.buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    w.finish()
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader::open(bytes, MAGIC, VERSION, "checkpoint")?;
    let text = r.string()?;
    let mut model_text = String::new();
    let (mut iter, mut adam_step) = (None, None);
    for line in text.lines() {
        match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some(("iter", v)) => iter = v.parse::<usize>().ok(),
            Some(("adam_step", v)) => adam_step = v.parse::<u64>().ok(),
            _ => {
                model_text.push_str(line);
                model_text.push('\n');
            }
        }
    }
    let (iter, adam_step) = iter
        .zip(adam_step)
        .ok_or_else(|| format_err!("checkpoint config lacks iter/adam_step"))?;
    let config = ModelConfig::from_text(&model_text)?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        if rank > 8 {
            return Err(format_err!("tensor {name}: implausible rank {rank}"));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format_err!("tensor {name}: size overflow"))?;
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| format_err!("tensor {name}: size overflow"))?,
        )?;
        let data: Vec<T> = raw
            .chunks(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        tensors.push((name, Tensor::new(&dims, data)?));
    }
    r.finish()?;
    let n_params = lapar_core::net::expected_shapes(&config).len();
    let adam = match tensors.len() {
        n if n == n_params => None,
        n if n == 3 * n_params => {
            let moments = tensors.split_off(n_params);
            let (m, v) = moments.split_at(n_params);
            let mut bufs = (Vec::new(), Vec::new());
            for (i, (name, _)) in tensors.iter().enumerate() {
                for (prefix, list, out) in [("adam.m.", m, &mut bufs.0), ("adam.v.", v, &mut bufs.1)] {
                    let (mname, t) = &list[i];
                    if *mname != format!("{prefix}{name}") || t.shape() != tensors[i].1.shape() {
                        return Err(format_err!("optimiser tensor {mname} does not match parameter {name}"));
                    }
                    out.push(t.data().to_vec());
                }
            }
            Some(Adam::from_state(adam_step, bufs.0, bufs.1)?)
        }
        n => return Err(format_err!("config implies {n_params} parameter tensors, file has {n}")),
    };
    let model = ModelState::from_params(config, tensors)?;
    Ok(Checkpoint { model, adam, iter })
}

pub fn save<T: Real>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    write_atomic(path, &encode(ck))
}

pub fn load<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|e| format_err!("{}: {e}", path.display()))
}

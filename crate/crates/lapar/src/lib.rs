//! File formats, configuration and the `lapar` command-line tool on top of
//! [`lapar_core`].

mod binfmt;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dictfile;
mod error;
pub mod imageio;
pub mod pipeline;
pub mod tables;

pub use error::{Error, Result};

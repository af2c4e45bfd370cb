//! Pixel-adaptive image restoration with per-pixel linear combinations of a
//! fixed Gaussian / difference-of-Gaussians filter dictionary.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches the
//! filesystem, image codecs or the command line lives in the `lapar` crate.
//!
//! Pipeline overview:
//!
//! 1. [`net::ModelState`] regresses a [`assembly::CoefficientMap`] from the
//!    degraded input.
//! 2. [`assembly`] combines the coefficients with a [`dictionary::Dictionary`]
//!    into one filter per output pixel.
//! 3. The filters are applied to the cheaply upsampled (or directly the
//!    degraded) image.
//!
//! Convolutions everywhere in this crate use cross-correlation semantics:
//! tap `(a, b)` of a `k x k` kernel multiplies the pixel at offset
//! `(a - k/2, b - k/2)` from the output location. Dictionary filters are
//! built with the same orientation, so a kernel's row-major taps line up with
//! the row-major neighbourhood rows of a [`resample::PatchMatrix`].
#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod assembly;
pub mod dictionary;
mod error;
pub mod image;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod oracle;
mod real;
pub mod resample;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::{ColorSpace, Image};
pub use real::Real;

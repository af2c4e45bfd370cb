//! Procedural test images: smooth gradients with anti-aliased shapes, line
//! segments and oriented gratings. Used for the bundled toy datasets.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{ColorSpace, Image};

const SUPERSAMPLE: usize = 4;

enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rect {
        cx: f64,
        cy: f64,
        hw: f64,
        hh: f64,
        cos: f64,
        sin: f64,
    },
    Line {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        half_width: f64,
    },
    Grating {
        cx: f64,
        cy: f64,
        r: f64,
        freq: f64,
        cos: f64,
        sin: f64,
    },
}

impl Shape {
    /// Coverage mask value in `[0, 1]` at a point (gratings return a
    /// modulation, everything else 0 or 1).
    fn sample(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            Shape::Disc { cx, cy, r } => ((x - cx).powi(2) + (y - cy).powi(2) <= r * r).then_some(1.0),
            Shape::Rect {
                cx,
                cy,
                hw,
                hh,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                (u.abs() <= hw && v.abs() <= hh).then_some(1.0)
            }
            Shape::Line {
                x0,
                y0,
                x1,
                y1,
                half_width,
            } => {
                let (vx, vy) = (x1 - x0, y1 - y0);
                let len2 = vx * vx + vy * vy;
                let t = (((x - x0) * vx + (y - y0) * vy) / len2).clamp(0.0, 1.0);
                let (px, py) = (x0 + t * vx, y0 + t * vy);
                ((x - px).powi(2) + (y - py).powi(2) <= half_width * half_width).then_some(1.0)
            }
            Shape::Grating {
                cx,
                cy,
                r,
                freq,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy > r * r {
                    return None;
                }
                let phase = 2.0 * PI * freq * (cos * dx + sin * dy);
                Some(if phase.sin() >= 0.0 { 1.0 } else { 0.0 })
            }
        }
    }
}

/// Deterministic grayscale test image for `seed`.
pub fn synthetic_image(seed: u64, height: usize, width: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f64, width as f64);
    let base = rng.random_range(0.2..0.8);
    let gx = rng.random_range(-0.3..0.3) / w;
    let gy = rng.random_range(-0.3..0.3) / h;
    let n_shapes = rng.random_range(8..14);
    let mut shapes: Vec<(Shape, f64, f64)> = Vec::with_capacity(n_shapes);
    let scale = h.min(w);
    for _ in 0..n_shapes {
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let angle: f64 = rng.random_range(0.0..PI);
        let shape = match rng.random_range(0..4) {
            0 => Shape::Disc {
                cx,
                cy,
                r: rng.random_range(0.05..0.25) * scale,
            },
            1 => Shape::Rect {
                cx,
                cy,
                hw: rng.random_range(0.05..0.3) * scale,
                hh: rng.random_range(0.03..0.2) * scale,
                cos: angle.cos(),
                sin: angle.sin(),
            },
            2 => {
                let len = rng.random_range(0.2..0.8) * scale;
                Shape::Line {
                    x0: cx,
                    y0: cy,
                    x1: cx + len * angle.cos(),
                    y1: cy + len * angle.sin(),
                    half_width: rng.random_range(0.5..2.5),
                }
            }
            _ => Shape::Grating {
                cx,
                cy,
                r: rng.random_range(0.1..0.3) * scale,
                freq: rng.random_range(0.05..0.2),
                cos: angle.cos(),
                sin: angle.sin(),
            },
        };
        let value = rng.random_range(0.0..1.0);
        let alpha = rng.random_range(0.5..1.0);
        shapes.push((shape, value, alpha));
    }
    let mut px = vec![0.0; height * width];
    let ss = SUPERSAMPLE as f64;
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let fx = x as f64 + (sx as f64 + 0.5) / ss;
                    let fy = y as f64 + (sy as f64 + 0.5) / ss;
                    let mut v = base + gx * fx + gy * fy;
                    for (shape, value, alpha) in &shapes {
                        if let Some(m) = shape.sample(fx, fy) {
                            let target = match shape {
                                Shape::Grating { .. } => value * m + (1.0 - value) * (1.0 - m),
                                _ => *value,
                            };
                            v = v * (1.0 - alpha) + target * alpha;
                        }
                    }
                    acc += v;
                }
            }
            px[y * width + x] = (acc / (ss * ss)).clamp(0.0, 1.0);
        }
    }
    Image::gray(height, width, px).expect("synthetic image is finite")
}

/// Three-channel variant: independent tints of one structure.
pub fn synthetic_rgb(seed: u64, height: usize, width: usize) -> Image {
    let luma = synthetic_image(seed, height, width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut planes = Vec::with_capacity(3);
    for _ in 0..3 {
        let gain = rng.random_range(0.7..1.0);
        let offset = rng.random_range(0.0..0.3);
        planes.push(luma.map(|v| (v * gain + offset * (1.0 - v)).clamp(0.0, 1.0)));
    }
    Image::from_planes(&planes, ColorSpace::Rgb).expect("planes share dimensions")
}

/// `count` images with seeds `seed, seed + 1, ...`.
pub fn synthetic_set(seed: u64, count: usize, height: usize, width: usize) -> Vec<Image> {
    (0..count as u64)
        .map(|i| synthetic_image(seed.wrapping_add(i), height, width))
        .collect()
}

//! Planar real-valued rasters.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ColorSpace {
    Rgb,
    YCbCr,
    Gray,
}

/// Planar image (`channel, row, column`), nominally in `[0, 1]`.
///
/// Intermediate results (filter outputs, residuals) may leave `[0, 1]`;
/// clamping happens explicitly via [`Image::clamped`] or when saving.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f64> {
    height: usize,
    width: usize,
    channels: usize,
    colorspace: ColorSpace,
    pixels: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, colorspace: ColorSpace, pixels: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid!("image dimensions must be positive, got {height}x{width}"));
        }
        match (channels, colorspace) {
            (1, ColorSpace::Gray) | (3, ColorSpace::Rgb | ColorSpace::YCbCr) => {}
            _ => return Err(invalid!("{channels} channel(s) incompatible with {colorspace:?}")),
        }
        if pixels.len() != height * width * channels {
            return Err(invalid!(
                "pixel buffer has {} values, expected {height}x{width}x{channels}",
                pixels.len()
            ));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("image contains non-finite pixels"));
        }
        Ok(Self {
            height,
            width,
            channels,
            colorspace,
            pixels,
        })
    }

    pub fn gray(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        Self::new(height, width, 1, ColorSpace::Gray, pixels)
    }

    pub fn constant(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels: 1,
            colorspace: ColorSpace::Gray,
            pixels: vec![value; height * width],
        }
    }

    /// Single-channel image with `f(row, col)` at each pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            channels: 1,
            colorspace: ColorSpace::Gray,
            pixels,
        }
    }

    /// Stacks single-channel planes into one image.
    pub fn from_planes(planes: &[Image<T>], colorspace: ColorSpace) -> Result<Self> {
        let first = planes.first().ok_or_else(|| invalid!("no planes given"))?;
        let mut pixels = Vec::with_capacity(first.pixels.len() * planes.len());
        for p in planes {
            if p.channels != 1 || p.height != first.height || p.width != first.width {
                return Err(invalid!("planes must be single-channel with equal dimensions"));
            }
            pixels.extend_from_slice(&p.pixels);
        }
        Self::new(first.height, first.width, planes.len(), colorspace, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.pixels[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    /// Channel `c` as a grayscale image.
    pub fn channel(&self, c: usize) -> Image<T> {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            colorspace: ColorSpace::Gray,
            pixels: self.plane(c).to_vec(),
        }
    }

    pub fn split(&self) -> Vec<Image<T>> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    pub fn with_colorspace(mut self, colorspace: ColorSpace) -> Result<Self> {
        match (self.channels, colorspace) {
            (1, ColorSpace::Gray) | (3, ColorSpace::Rgb | ColorSpace::YCbCr) => {
                self.colorspace = colorspace;
                Ok(self)
            }
            _ => Err(invalid!(
                "{} channel(s) incompatible with {colorspace:?}",
                self.channels
            )),
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            colorspace: self.colorspace,
            pixels: self.pixels.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Image<T> {
        let mut out = self.clone();
        out.pixels.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    pub fn clamped(&self) -> Image<T> {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image<T>> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(invalid!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height,
                self.width
            ));
        }
        let mut pixels = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in top..top + height {
                pixels.extend_from_slice(&plane[y * self.width + left..y * self.width + left + width]);
            }
        }
        Ok(Image {
            height,
            width,
            channels: self.channels,
            colorspace: self.colorspace,
            pixels,
        })
    }

    /// Crops the bottom/right remainder so both dimensions divide by `s`.
    pub fn crop_to_multiple(&self, s: usize) -> Result<Image<T>> {
        let h = self.height - self.height % s.max(1);
        let w = self.width - self.width % s.max(1);
        self.crop(0, 0, h, w)
    }

    fn remap(&self, height: usize, width: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Image<T> {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    let (sy, sx) = src(y, x);
                    pixels.push(self.at(c, sy, sx));
                }
            }
        }
        Image {
            height,
            width,
            channels: self.channels,
            colorspace: self.colorspace,
            pixels,
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Image<T> {
        let w = self.width;
        self.remap(self.height, w, |y, x| (y, w - 1 - x))
    }

    /// Mirror top-bottom.
    pub fn flip_vertical(&self) -> Image<T> {
        let h = self.height;
        self.remap(h, self.width, |y, x| (h - 1 - y, x))
    }

    /// Rotates counter-clockwise by `quarter_turns · 90°`.
    pub fn rotate90(&self, quarter_turns: usize) -> Image<T> {
        let (h, w) = (self.height, self.width);
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => self.remap(w, h, |y, x| (x, w - 1 - y)),
            2 => self.remap(h, w, |y, x| (h - 1 - y, w - 1 - x)),
            _ => self.remap(w, h, |y, x| (h - 1 - x, y)),
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|v| v.f64()).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn same_dims(&self, other: &Image<T>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

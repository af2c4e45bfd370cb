//! 8-bit image files: PNG and JPEG through the `image` crate, binary
//! PGM/PPM by hand. Pixels are mapped to `[0, 1]` on load; on save they are
//! clamped and quantised with round-half-away-from-zero.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use lapar_core::metrics::ycbcr_to_rgb;
use lapar_core::{ColorSpace, Image};

use crate::error::{format_err, io_err, Error, Result};

/// `round(clamp(v, 0, 1) · 255)` with ties away from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved 8-bit samples (`row, column, channel`).
pub fn to_bytes(img: &Image) -> Result<Vec<u8>> {
    let img = match img.colorspace() {
        ColorSpace::YCbCr => ycbcr_to_rgb(img)?,
        _ => img.clone(),
    };
    let (c, n) = (img.channels(), img.height() * img.width());
    let mut out = vec![0u8; n * c];
    for ch in 0..c {
        for (i, &v) in img.plane(ch).iter().enumerate() {
            out[i * c + ch] = quantize(v);
        }
    }
    Ok(out)
}

/// Inverse of [`to_bytes`] with samples scaled by `1 / maxval`.
pub fn from_samples(height: usize, width: usize, channels: usize, samples: &[u16], maxval: u16) -> Result<Image> {
    let n = height * width;
    if samples.len() != n * channels {
        return Err(format_err!(
            "expected {} samples, found {}",
            n * channels,
            samples.len()
        ));
    }
    let scale = 1.0 / maxval as f64;
    let mut planar = vec![0.0; n * channels];
    for (i, &s) in samples.iter().enumerate() {
        planar[(i % channels) * n + i / channels] = s as f64 * scale;
    }
    let cs = if channels == 1 {
        ColorSpace::Gray
    } else {
        ColorSpace::Rgb
    };
    Ok(Image::new(height, width, channels, cs, planar)?)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    match extension(path).as_str() {
        "pgm" | "ppm" | "pnm" => parse_pnm(&bytes).map_err(|e| format_err!("{}: {e}", path.display())),
        _ => decode(&bytes),
    }
}

fn decode(bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory(bytes)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let gray = matches!(
        dynimg,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let px: Vec<u16> = dynimg.to_luma8().into_raw().into_iter().map(u16::from).collect();
        from_samples(h, w, 1, &px, 255)
    } else {
        let px: Vec<u16> = dynimg.to_rgb8().into_raw().into_iter().map(u16::from).collect();
        from_samples(h, w, 3, &px, 255)
    }
}

/// Writes by extension: `.png`, `.jpg`/`.jpeg`, `.pgm` (one channel) or
/// `.ppm` (three channels). The file appears atomically.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode(img, &extension(path))?)
}

/// Encodes `img` in the format named by `ext`.
pub fn encode(img: &Image, ext: &str) -> Result<Vec<u8>> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let bytes = to_bytes(img)?;
    match ext {
        "pgm" | "ppm" => {
            let (magic, want) = if ext == "pgm" { ("P5", 1) } else { ("P6", 3) };
            if c != want {
                return Err(Error::Format(format!(".{ext} needs {want} channel(s), image has {c}")));
            }
            let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&bytes);
            Ok(out)
        }
        "png" | "jpg" | "jpeg" => {
            let dynimg = match c {
                1 => DynamicImage::ImageLuma8(
                    ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, bytes).expect("buffer size"),
                ),
                3 => DynamicImage::ImageRgb8(
                    ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, bytes).expect("buffer size"),
                ),
                _ => return Err(format_err!("cannot encode a {c}-channel image")),
            };
            let mut out = std::io::Cursor::new(Vec::new());
            let format = if ext == "png" {
                image::ImageFormat::Png
            } else {
                image::ImageFormat::Jpeg
            };
            dynimg.write_to(&mut out, format)?;
            Ok(out.into_inner())
        }
        _ => Err(format_err!("unsupported image extension {ext:?} (png, jpg, pgm, ppm)")),
    }
}

/// JPEG bytes at `quality` (1..=100), for producing externally compressed
/// test inputs.
pub fn encode_jpeg(img: &Image, quality: u8) -> Result<Vec<u8>> {
    let (h, w, c) = (img.height() as u32, img.width() as u32, img.channels());
    let bytes = to_bytes(img)?;
    let mut out = Vec::new();
    let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    enc.encode(&bytes, w, h, color)?;
    Ok(out)
}

/// Binary PGM (`P5`) or PPM (`P6`), maxval up to 65535.
pub fn parse_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(format_err!("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(format_err!("unsupported PNM magic {m:?} (binary P5/P6 only)")),
    };
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| format_err!("bad {what} {t:?}"))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || !(1..=65535).contains(&maxval) {
        return Err(format_err!("invalid PNM header {w}x{h} maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = &bytes[(pos + 1).min(bytes.len())..];
    let n = w * h * channels;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    if data.len() < need {
        return Err(format_err!("raster truncated: {} of {need} bytes", data.len()));
    }
    let samples: Vec<u16> = if wide {
        data[..need]
            .chunks(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]))
            .collect()
    } else {
        data[..n].iter().map(|&b| u16::from(b)).collect()
    };
    if samples.iter().any(|&s| s as usize > maxval) {
        return Err(format_err!("sample exceeds maxval {maxval}"));
    }
    from_samples(h, w, channels, &samples, maxval as u16)
}

/// Writes via a temporary sibling and a rename, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lapar_core::synth::{synthetic_image, synthetic_rgb};
    use proptest::prelude::*;

    #[test]
    fn quantisation_rounds_half_away() {
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(1.5 / 255.0), 2);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
    }

    #[test]
    fn formats_round_trip_quantised_images() {
        let gray = synthetic_image(1, 13, 9).map(|v| (v * 255.0).round() / 255.0);
        let rgb = synthetic_rgb(2, 7, 11).map(|v| (v * 255.0).round() / 255.0);
        for (img, exts) in [(&gray, ["png", "pgm"]), (&rgb, ["png", "ppm"])] {
            for ext in exts {
                let bytes = encode(img, ext).unwrap();
                let back = if ext == "png" {
                    decode(&bytes).unwrap()
                } else {
                    parse_pnm(&bytes).unwrap()
                };
                assert_eq!(back.channels(), img.channels());
                for (a, b) in back.pixels().iter().zip(img.pixels()) {
                    assert!((a - b).abs() < 1e-12, "{ext}");
                }
            }
        }
        assert!(encode(&gray, "ppm").is_err());
        assert!(encode(&gray, "bmp").is_err());
    }

    #[test]
    fn pnm_parser_edge_cases() {
        let img = parse_pnm(b"P5\n# comment\n2 1\n# another\n255\n\x00\xff").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
        let wide = parse_pnm(b"P5 1 1 1023 \x03\xff").unwrap();
        assert_eq!(wide.pixels(), &[1.0]);
        assert!(parse_pnm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(parse_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(parse_pnm(b"P5\n1 1\n10\n\x0b").is_err());
        assert!(parse_pnm(b"P6\n0 1\n255\n").is_err());
    }

    #[test]
    fn atomic_write_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let img = synthetic_rgb(3, 8, 8);
        for ext in ["png", "ppm", "jpg"] {
            let path = dir.path().join(format!("x.{ext}"));
            write_image(&path, &img).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!((back.height(), back.width(), back.channels()), (8, 8, 3));
        }
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
        assert!(read_image(&dir.path().join("missing.png")).is_err());
    }

    #[test]
    fn ycbcr_images_are_saved_as_rgb() {
        let rgb = synthetic_rgb(4, 5, 5);
        let ycc = lapar_core::metrics::rgb_to_ycbcr(&rgb).unwrap();
        assert_eq!(to_bytes(&ycc).unwrap(), to_bytes(&rgb).unwrap());
    }

    proptest! {
        #[test]
        fn byte_images_survive_pnm(h in 1usize..6, w in 1usize..6, rgb: bool, seed: u64) {
            let c = if rgb { 3 } else { 1 };
            let bytes: Vec<u16> = (0..h * w * c).map(|i| ((seed >> (i % 56)) as u16 ^ i as u16) & 0xff).collect();
            let img = from_samples(h, w, c, &bytes, 255).unwrap();
            let enc = encode(&img, if rgb { "ppm" } else { "pgm" }).unwrap();
            let back = parse_pnm(&enc).unwrap();
            prop_assert_eq!(to_bytes(&back).unwrap(), bytes.iter().map(|&b| b as u8).collect::<Vec<_>>());
        }
    }
}

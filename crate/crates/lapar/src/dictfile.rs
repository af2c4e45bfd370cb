//! Dictionary files and filter images.
//!
//! ```text
//! "LDIC"  u16 version
//! u32 len, name
//! u32 k, u32 L
//! per basis: u32 len, JSON basis description, k² x f64 taps
//! u32 CRC32 of everything above
//! ```

use std::path::{Path, PathBuf};

use lapar_core::dictionary::{BasisSpec, Dictionary, FilterKernel};
use lapar_core::Image;

use crate::binfmt::{Reader, Writer};
use crate::error::{format_err, io_err, Result};
use crate::imageio::{write_atomic, write_image};

pub const MAGIC: &[u8; 4] = b"LDIC";
pub const VERSION: u16 = 1;

pub fn encode(dict: &Dictionary) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.bytes(dict.name().as_bytes());
    w.u32(dict.kernel_size());
    w.u32(dict.len());
    for (basis, spec) in dict.bases().iter().zip(dict.specs()) {
        w.bytes(serde_json::to_string(spec).expect("basis specs serialise").as_bytes());
        for &t in basis.taps() {
            w.buf.extend_from_slice(&t.to_le_bytes());
        }
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<Dictionary> {
    let mut r = Reader::open(bytes, MAGIC, VERSION, "dictionary")?;
    let name = r.string()?;
    let (k, l) = (r.u32()?, r.u32()?);
    if k == 0 || k > 63 || l == 0 {
        return Err(format_err!("dictionary: implausible size k = {k}, L = {l}"));
    }
    let mut bases = Vec::with_capacity(l);
    let mut specs = Vec::with_capacity(l);
    for i in 0..l {
        let spec: BasisSpec = serde_json::from_slice(r.bytes()?).map_err(|e| format_err!("basis {i}: {e}"))?;
        let taps = r
            .take(8 * k * k)?
            .chunks(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        bases.push(FilterKernel::new(k, taps)?);
        specs.push(spec);
    }
    r.finish()?;
    Ok(Dictionary::from_parts(name, bases, specs)?)
}

pub fn save(path: &Path, dict: &Dictionary) -> Result<()> {
    write_atomic(path, &encode(dict))
}

pub fn load(path: &Path) -> Result<Dictionary> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|e| format_err!("{}: {e}", path.display()))
}

/// Pixel size of one tap in exported images.
pub const EXPORT_CELL: usize = 8;

/// Writes `filter_NNN.png` per basis (min-max normalised, each tap an
/// [`EXPORT_CELL`]-pixel square) and `montage.png`. Returns the paths.
pub fn export_filters(dict: &Dictionary, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let k = dict.kernel_size();
    let side = k * EXPORT_CELL;
    let mut written = Vec::with_capacity(dict.len() + 1);
    for (i, basis) in dict.bases().iter().enumerate() {
        let norm = basis.display_normalized();
        let img = Image::from_fn(side, side, |y, x| norm[(y / EXPORT_CELL) * k + x / EXPORT_CELL]);
        let path = dir.join(format!("filter_{i:03}.png"));
        write_image(&path, &img)?;
        written.push(path);
    }
    let columns = (dict.len() as f64).sqrt().ceil() as usize;
    let path = dir.join("montage.png");
    write_image(&path, &dict.montage(columns.max(1), EXPORT_CELL)?)?;
    written.push(path);
    Ok(written)
}

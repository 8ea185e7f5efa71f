//! `KATB` feature-bag files, little-endian:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `KATB` |
//! | 4  | 4 | version (u32, currently 1) |
//! | 8  | 4 | n_p (u32) |
//! | 12 | 4 | d_f (u32) |
//! | 16 | 4 | label (u32) |
//! | 20 | 8·n_p | coordinates `(m, n)` as i32 pairs |
//! | 20+8·n_p | 4·n_p·d_f | features, row-major f32 |

use std::fs;
use std::path::Path;

use super::FeatureBag;
use crate::anchor_masks::PatchGrid;
use crate::autodiff::Tensor;
use crate::error::{KatError, Result};
use crate::model::Reader;

pub const BAG_MAGIC: &[u8; 4] = b"KATB";
pub const BAG_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 20;

pub fn encoded_len(n_p: usize, d_f: usize) -> usize {
    HEADER_BYTES + 8 * n_p + 4 * n_p * d_f
}

pub fn encode_bag(bag: &FeatureBag) -> Result<Vec<u8>> {
    let (n_p, d_f) = bag.features.dims2()?;
    let mut buf = Vec::with_capacity(encoded_len(n_p, d_f));
    buf.extend_from_slice(BAG_MAGIC);
    buf.extend_from_slice(&BAG_VERSION.to_le_bytes());
    for v in [n_p, d_f, bag.label] {
        let v = u32::try_from(v).map_err(|_| KatError::param(format!("{v} does not fit in u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &(m, n) in bag.grid.coords() {
        buf.extend_from_slice(&m.to_le_bytes());
        buf.extend_from_slice(&n.to_le_bytes());
    }
    for &v in bag.features.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_bag(bytes: &[u8], id: &str) -> Result<FeatureBag> {
    let mut r = Reader::new(bytes);
    let magic = r.take::<4>("magic")?;
    if &magic != BAG_MAGIC {
        return Err(KatError::format(0, format!("bad magic {magic:?}, expected KATB")));
    }
    let version = r.u32("version")?;
    if version != BAG_VERSION {
        return Err(KatError::format(4, format!("unsupported bag version {version}")));
    }
    let n_p = r.u32("n_p")? as usize;
    let d_f = r.u32("d_f")? as usize;
    let label = r.u32("label")? as usize;
    if n_p == 0 || d_f == 0 {
        return Err(KatError::format(8, "bag must hold at least one patch and one feature"));
    }
    let expected = encoded_len(n_p, d_f);
    if bytes.len() < expected {
        return Err(KatError::format(
            bytes.len() as u64,
            format!("truncated: header promises {expected} bytes"),
        ));
    }
    let mut coords = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        coords.push((r.i32("coordinates")?, r.i32("coordinates")?));
    }
    let mut data = Vec::with_capacity(n_p * d_f);
    for _ in 0..n_p * d_f {
        data.push(r.f32("features")? as f64);
    }
    r.finish()?;
    let grid = PatchGrid::new(coords).map_err(|e| KatError::format(HEADER_BYTES as u64, e.to_string()))?;
    Ok(FeatureBag {
        id: id.to_string(),
        grid,
        features: Tensor::matrix(n_p, d_f, data)?,
        label,
    })
}

pub fn write_bag(bag: &FeatureBag, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_bag(bag)?)?;
    Ok(())
}

/// Reads a bag; its id is the file stem.
pub fn read_bag(path: impl AsRef<Path>) -> Result<FeatureBag> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_bag(&fs::read(path)?, &id)
}

//! `KATM` model files.
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `KATM` |
//! | 4  | 4 | format version (u32, currently 1) |
//! | 8  | 24 | d_f, d_e, n_blocks, n_heads, d_ff, n_classes (u32 each) |
//! | 32 | 4 | dropout (f32) |
//! | 36 | 4 | flags (u32): bit 0 shared projections, bit 1 classification residual |
//! | 40 | 4 | patches per kernel n̄_k (u32) |
//! | 44 | 8 | anchor seed (u64) |
//! | 52 | 4 | number of mask scales S (u32) |
//! | 56 | 8·S | mask scales δ (f64) |
//! | 56+8S | 8 | parameter count P (u64) |
//! | 64+8S | 4·P | parameters (f32) in enumeration order |

use std::fs;
use std::path::Path;

use super::{KatConfig, KatParams};
use crate::error::{KatError, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"KATM";
pub const MODEL_VERSION: u32 = 1;

/// How masks were built for the bags a model was trained on; evaluation
/// rebuilds masks with the same settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSettings {
    pub nk_bar: usize,
    pub anchor_seed: u64,
    pub deltas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub config: KatConfig,
    pub masks: MaskSettings,
    pub params: KatParams,
}

impl ModelFile {
    /// Parameters as stored: every value rounded to `f32`.
    pub fn rounded(mut self) -> Self {
        let flat: Vec<f64> = self.params.to_flat().iter().map(|&v| v as f32 as f64).collect();
        self.params.load_flat(&flat).expect("same layout");
        self
    }
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| KatError::param(format!("{what} {v} does not fit in u32")))
}

pub fn encode_model(model: &ModelFile) -> Result<Vec<u8>> {
    let c = &model.config;
    let flat = model.params.to_flat();
    let mut buf = Vec::with_capacity(64 + 8 * model.masks.deltas.len() + 4 * flat.len());
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for (v, name) in [
        (c.d_f, "d_f"),
        (c.d_e, "d_e"),
        (c.n_blocks, "n_blocks"),
        (c.n_heads, "n_heads"),
        (c.d_ff, "d_ff"),
        (c.n_classes, "n_classes"),
    ] {
        buf.extend_from_slice(&u32_field(v, name)?.to_le_bytes());
    }
    buf.extend_from_slice(&(c.dropout as f32).to_le_bytes());
    let flags = u32::from(c.shared_projections) | (u32::from(c.cls_residual) << 1);
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&u32_field(model.masks.nk_bar, "nk_bar")?.to_le_bytes());
    buf.extend_from_slice(&model.masks.anchor_seed.to_le_bytes());
    buf.extend_from_slice(&u32_field(model.masks.deltas.len(), "scale count")?.to_le_bytes());
    for d in &model.masks.deltas {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        if self.pos + N > self.bytes.len() {
            return Err(KatError::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    pub(crate) fn i32(&mut self, what: &str) -> Result<i32> {
        self.take::<4>(what).map(i32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        self.take::<8>(what).map(u64::from_le_bytes)
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        self.take::<4>(what).map(f32::from_le_bytes)
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        self.take::<8>(what).map(f64::from_le_bytes)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(KatError::format(
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Reader::new(bytes);
    let magic = r.take::<4>("magic")?;
    if &magic != MODEL_MAGIC {
        return Err(KatError::format(0, format!("bad magic {magic:?}, expected KATM")));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(KatError::format(4, format!("unsupported model version {version}")));
    }
    let mut dims = [0usize; 6];
    for (d, name) in dims
        .iter_mut()
        .zip(["d_f", "d_e", "n_blocks", "n_heads", "d_ff", "n_classes"])
    {
        *d = r.u32(name)? as usize;
    }
    let dropout = r.f32("dropout")? as f64;
    let flags_at = r.offset();
    let flags = r.u32("flags")?;
    if flags > 0b11 {
        return Err(KatError::format(flags_at, format!("unknown flag bits {flags:#x}")));
    }
    let config = KatConfig {
        d_f: dims[0],
        d_e: dims[1],
        n_blocks: dims[2],
        n_heads: dims[3],
        d_ff: dims[4],
        n_classes: dims[5],
        dropout,
        shared_projections: flags & 1 != 0,
        cls_residual: flags & 2 != 0,
    };
    config
        .validate()
        .map_err(|e| KatError::format(8, format!("invalid stored config: {e}")))?;

    let nk_bar = r.u32("nk_bar")? as usize;
    let anchor_seed = r.u64("anchor seed")?;
    let n_scales = r.u32("scale count")? as usize;
    let mut deltas = Vec::with_capacity(n_scales.min(1024));
    for _ in 0..n_scales {
        deltas.push(r.f64("mask scale")?);
    }

    let mut params = KatParams::zeros(&config);
    let count_at = r.offset();
    let count = r.u64("parameter count")?;
    if count != params.count() as u64 {
        return Err(KatError::format(
            count_at,
            format!("file holds {count} parameters, config implies {}", params.count()),
        ));
    }
    let mut flat = Vec::with_capacity(params.count());
    for _ in 0..count {
        flat.push(r.f32("parameters")? as f64);
    }
    r.finish()?;
    params.load_flat(&flat)?;
    Ok(ModelFile {
        config,
        masks: MaskSettings {
            nk_bar,
            anchor_seed,
            deltas,
        },
        params,
    })
}

pub fn save_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    decode_model(&fs::read(path)?)
}

//! Byte-level checks of the checked-in `KATB` / `KATM` files, decoded by
//! hand at the documented offsets.

use std::path::PathBuf;

use kat_core::anchor_masks::PatchGrid;
use kat_core::autodiff::Tensor;
use kat_core::bag_io::{decode_bag, encode_bag, FeatureBag};
use kat_core::model::{decode_model, encode_model, KatConfig, KatParams, MaskSettings, ModelFile};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn i32_at(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

pub const GOLDEN_COORDS: [(i32, i32); 3] = [(0, 0), (0, 1), (2, 3)];
pub const GOLDEN_FEATURES: [f64; 6] = [0.5, -1.25, 2.0, 0.0, -3.5, 1.0];

pub fn golden_bag() -> FeatureBag {
    FeatureBag {
        id: "golden".into(),
        grid: PatchGrid::new(GOLDEN_COORDS.to_vec()).unwrap(),
        features: Tensor::matrix(3, 2, GOLDEN_FEATURES.to_vec()).unwrap(),
        label: 1,
    }
}

pub fn golden_model() -> ModelFile {
    let mut config = KatConfig::new(2, 2, 1, 1, 2);
    config.d_ff = 2;
    config.dropout = 0.25;
    let mut params = KatParams::zeros(&config);
    let flat: Vec<f64> = (0..params.count()).map(|i| i as f64 * 0.125 - 1.0).collect();
    params.load_flat(&flat).unwrap();
    ModelFile {
        config,
        masks: MaskSettings {
            nk_bar: 16,
            anchor_seed: 7,
            deltas: vec![16.0],
        },
        params,
    }
}

pub fn check_golden_bag() -> Result<(), String> {
    let bytes = std::fs::read(data_path("golden.katb")).map_err(|e| e.to_string())?;
    ensure(bytes.len() == 20 + 8 * 3 + 4 * 3 * 2, || {
        format!("bag file is {} bytes", bytes.len())
    })?;
    ensure(&bytes[0..4] == b"KATB", || "bag magic".into())?;
    ensure(u32_at(&bytes, 4) == 1, || "bag version at 4".into())?;
    ensure(u32_at(&bytes, 8) == 3, || "n_p at 8".into())?;
    ensure(u32_at(&bytes, 12) == 2, || "d_f at 12".into())?;
    ensure(u32_at(&bytes, 16) == 1, || "label at 16".into())?;
    for (i, &(m, n)) in GOLDEN_COORDS.iter().enumerate() {
        let at = 20 + 8 * i;
        ensure((i32_at(&bytes, at), i32_at(&bytes, at + 4)) == (m, n), || {
            format!("coordinate {i} at {at}")
        })?;
    }
    for (i, &v) in GOLDEN_FEATURES.iter().enumerate() {
        let at = 44 + 4 * i;
        ensure(f32_at(&bytes, at) as f64 == v, || format!("feature {i} at {at}"))?;
    }
    let decoded = decode_bag(&bytes, "golden").map_err(|e| e.to_string())?;
    ensure(decoded == golden_bag(), || {
        "decoded bag differs from the fixture".into()
    })?;
    let encoded = encode_bag(&golden_bag()).map_err(|e| e.to_string())?;
    ensure(encoded == bytes, || {
        "encoding the fixture does not reproduce the file".into()
    })
}

pub fn check_golden_model() -> Result<(), String> {
    let bytes = std::fs::read(data_path("golden.katm")).map_err(|e| e.to_string())?;
    let want = golden_model();
    let p = want.params.count();
    ensure(p == 54, || format!("fixture has {p} parameters"))?;
    ensure(bytes.len() == 64 + 8 + 4 * p, || {
        format!("model file is {} bytes", bytes.len())
    })?;
    ensure(&bytes[0..4] == b"KATM", || "model magic".into())?;
    ensure(u32_at(&bytes, 4) == 1, || "model version at 4".into())?;
    let dims: Vec<u32> = (0..6).map(|i| u32_at(&bytes, 8 + 4 * i)).collect();
    ensure(dims == [2, 2, 1, 1, 2, 2], || {
        format!("shape fields at 8..32: {dims:?}")
    })?;
    ensure(f32_at(&bytes, 32) == 0.25, || "dropout at 32".into())?;
    ensure(u32_at(&bytes, 36) == 0b11, || "flags at 36".into())?;
    ensure(u32_at(&bytes, 40) == 16, || "nk_bar at 40".into())?;
    ensure(u64_at(&bytes, 44) == 7, || "anchor seed at 44".into())?;
    ensure(u32_at(&bytes, 52) == 1, || "scale count at 52".into())?;
    ensure(f64_at(&bytes, 56) == 16.0, || "scale at 56".into())?;
    ensure(u64_at(&bytes, 64) == p as u64, || "parameter count at 64".into())?;
    for i in 0..p {
        let at = 72 + 4 * i;
        ensure(f32_at(&bytes, at) as f64 == i as f64 * 0.125 - 1.0, || {
            format!("parameter {i} at {at}")
        })?;
    }
    let decoded = decode_model(&bytes).map_err(|e| e.to_string())?;
    ensure(decoded == want, || "decoded model differs from the fixture".into())?;
    let encoded = encode_model(&want).map_err(|e| e.to_string())?;
    ensure(encoded == bytes, || {
        "encoding the fixture does not reproduce the file".into()
    })
}

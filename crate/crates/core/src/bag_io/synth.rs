//! Synthetic bags standing in for real slide features.
//!
//! Each bag is an irregular blob of grid cells grown by a random walk.
//! Every patch feature is isotropic Gaussian noise; for class `y >= 1` a
//! disc of patches around one random tissue patch additionally carries
//! `strength * u_y`, where `u_y` is a fixed random unit direction of that
//! class. Class 0 carries no motif.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FeatureBag;
use crate::anchor_masks::PatchGrid;
use crate::autodiff::Tensor;
use crate::error::{KatError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_bags: usize,
    pub n_classes: usize,
    pub d_f: usize,
    pub side_min: usize,
    pub side_max: usize,
    /// Fraction of the `side × side` square covered by tissue.
    pub fill: f64,
    pub motif_radius: f64,
    pub motif_strength: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // 13..=25 sides at 0.64 fill give 108..=400 patches per bag
        SynthConfig {
            n_bags: 512,
            n_classes: 2,
            d_f: 64,
            side_min: 13,
            side_max: 25,
            fill: 0.64,
            motif_radius: 4.0,
            motif_strength: 2.0,
            noise_std: 1.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(KatError::Config(m));
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.motif_radius < 1.0 {
            return fail(format!("motif radius must be at least 1, got {}", self.motif_radius));
        }
        if self.n_bags == 0 || self.d_f == 0 {
            return fail("bag count and feature width must be positive".into());
        }
        if self.side_min == 0 || self.side_min > self.side_max {
            return fail(format!("bad grid side range {}..={}", self.side_min, self.side_max));
        }
        if !(self.fill > 0.0 && self.fill <= 1.0) {
            return fail(format!("tissue fill must lie in (0, 1], got {}", self.fill));
        }
        if !(self.noise_std >= 0.0) || !self.motif_strength.is_finite() {
            return fail("noise std must be non-negative and motif strength finite".into());
        }
        Ok(())
    }
}

/// Ground truth kept alongside each synthetic bag.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthBagInfo {
    pub motif_center: Option<(i32, i32)>,
    /// Patch indices that received the motif.
    pub motif_patches: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub bags: Vec<FeatureBag>,
    pub info: Vec<SynthBagInfo>,
    /// Unit motif direction of classes `1..C`; index 0 is class 1.
    pub directions: Vec<Vec<f64>>,
}

fn tissue_walk(rng: &mut ChaCha8Rng, side: i32, target: usize) -> Vec<(i32, i32)> {
    let mut cells = HashSet::with_capacity(target);
    let mut order = Vec::with_capacity(target);
    let mut pos = (side / 2, side / 2);
    while order.len() < target {
        if cells.insert(pos) {
            order.push(pos);
        }
        let (dm, dn) = [(0, 1), (0, -1), (1, 0), (-1, 0)][rng.random_range(0..4)];
        pos = ((pos.0 + dm).clamp(0, side - 1), (pos.1 + dn).clamp(0, side - 1));
    }
    order.sort_unstable();
    order
}

pub fn synth_dataset(config: &SynthConfig) -> Result<Vec<FeatureBag>> {
    Ok(synth_dataset_with_info(config)?.bags)
}

pub fn synth_dataset_with_info(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let directions: Vec<Vec<f64>> = (1..config.n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..config.d_f).map(|_| std_normal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let width = if config.n_bags > 1 {
        (config.n_bags - 1).to_string().len()
    } else {
        1
    };
    let r2 = config.motif_radius * config.motif_radius;
    let mut bags = Vec::with_capacity(config.n_bags);
    let mut info = Vec::with_capacity(config.n_bags);
    for b in 0..config.n_bags {
        let label = b % config.n_classes;
        let side = rng.random_range(config.side_min..=config.side_max) as i32;
        let target = (config.fill * (side * side) as f64).round() as usize;
        if target == 0 {
            return Err(KatError::Data(format!(
                "bag {b}: tissue fill {} on a {side}×{side} grid leaves no patches",
                config.fill
            )));
        }
        let coords = tissue_walk(&mut rng, side, target);
        let n_p = coords.len();
        let mut data: Vec<f64> = (0..n_p * config.d_f)
            .map(|_| config.noise_std * std_normal.sample(&mut rng))
            .collect();

        let mut bag_info = SynthBagInfo {
            motif_center: None,
            motif_patches: Vec::new(),
        };
        if label >= 1 {
            let center = coords[rng.random_range(0..n_p)];
            let dir = &directions[label - 1];
            for (i, &(m, n)) in coords.iter().enumerate() {
                let d2 = ((m - center.0).pow(2) + (n - center.1).pow(2)) as f64;
                if d2 <= r2 {
                    let row = &mut data[i * config.d_f..(i + 1) * config.d_f];
                    for (x, u) in row.iter_mut().zip(dir) {
                        *x += config.motif_strength * u;
                    }
                    bag_info.motif_patches.push(i);
                }
            }
            bag_info.motif_center = Some(center);
        }
        // stored as f32 on disk; round now so files round-trip exactly
        for x in &mut data {
            *x = *x as f32 as f64;
        }
        bags.push(FeatureBag {
            id: format!("bag_{b:0width$}"),
            grid: PatchGrid::new(coords)?,
            features: Tensor::matrix(n_p, config.d_f, data)?,
            label,
        });
        info.push(bag_info);
    }
    Ok(SynthDataset { bags, info, directions })
}
